//! Intervention policies: paired ITN / IRS coverage levels.
//!
//! Coverage quantizes to thousandths on construction, which makes policies
//! exact-equality values: they can key maps, deduplicate across machines,
//! and print canonically without float-comparison hazards. The canonical
//! text form always carries three decimals (`0.250`).

use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

/// A coverage fraction in `[0, 1]`, held in thousandths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coverage(u16);

impl Coverage {
    pub const ZERO: Coverage = Coverage(0);
    pub const FULL: Coverage = Coverage(1000);

    /// Validates `value` in `[0, 1]`, then rounds to the nearest thousandth.
    /// `field` names the value in the error.
    pub fn new(field: &'static str, value: f64) -> Result<Self, PolicyError> {
        if !(value >= 0.0 && value <= 1.0) {
            return Err(PolicyError::CoverageOutOfRange { field, value });
        }
        Ok(Coverage(libm::round(value * 1000.0) as u16))
    }

    /// Exact constructor from thousandths; `None` above 1000.
    pub fn from_millis(millis: u16) -> Option<Self> {
        (millis <= 1000).then_some(Coverage(millis))
    }

    pub fn millis(self) -> u16 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 1000.0
    }
}

/// Canonical three-decimal form: `0.000` through `1.000`.
impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.0 / 1000, self.0 % 1000)
    }
}

/// An intervention policy: ITN and IRS coverage.
///
/// Ordering is lexicographic (ITN first), which matches the row-major order
/// produced by [`Policy::grid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "PolicyWire", into = "PolicyWire")]
pub struct Policy {
    pub itn_coverage: Coverage,
    pub irs_coverage: Coverage,
}

impl Policy {
    /// No interventions; the comparison baseline.
    pub const ZERO: Policy = Policy {
        itn_coverage: Coverage::ZERO,
        irs_coverage: Coverage::ZERO,
    };

    /// Validates both coverages in `[0, 1]` and quantizes them.
    pub fn new(itn_coverage: f64, irs_coverage: f64) -> Result<Self, PolicyError> {
        Ok(Policy {
            itn_coverage: Coverage::new("itn_coverage", itn_coverage)?,
            irs_coverage: Coverage::new("irs_coverage", irs_coverage)?,
        })
    }

    /// Exact constructor from thousandths; `None` if either exceeds 1000.
    pub fn from_millis(itn: u16, irs: u16) -> Option<Self> {
        Some(Policy {
            itn_coverage: Coverage::from_millis(itn)?,
            irs_coverage: Coverage::from_millis(irs)?,
        })
    }

    /// The inclusive (itn, irs) grid with spacing `step`, row-major by ITN
    /// then IRS.
    ///
    /// `1/step` must be an integer (to within 1e-9) of at most 1000: finer
    /// spacing than the thousandth quantum would alias distinct grid points
    /// onto equal policies.
    pub fn grid(step: f64) -> Result<Vec<Policy>, PolicyError> {
        if !(step > 0.0 && step <= 1.0) {
            return Err(PolicyError::BadStep { step });
        }
        let inv = 1.0 / step;
        let rounded = libm::round(inv);
        if libm::fabs(inv - rounded) > 1e-9 || rounded > 1000.0 {
            return Err(PolicyError::BadStep { step });
        }
        let n = rounded as u32;
        let mut out = Vec::with_capacity(((n + 1) * (n + 1)) as usize);
        for i in 0..=n {
            for j in 0..=n {
                out.push(Policy {
                    itn_coverage: Coverage(grid_millis(i, n)),
                    irs_coverage: Coverage(grid_millis(j, n)),
                });
            }
        }
        Ok(out)
    }
}

/// `(0.500, 0.250)`.
impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.itn_coverage, self.irs_coverage)
    }
}

/// Thousandths for grid point `i` of `n` divisions, rounding half up.
fn grid_millis(i: u32, n: u32) -> u16 {
    ((i * 1000 + n / 2) / n) as u16
}

#[derive(Serialize, Deserialize)]
struct PolicyWire {
    itn_coverage: f64,
    irs_coverage: f64,
}

impl From<Policy> for PolicyWire {
    fn from(p: Policy) -> Self {
        PolicyWire {
            itn_coverage: p.itn_coverage.value(),
            irs_coverage: p.irs_coverage.value(),
        }
    }
}

impl TryFrom<PolicyWire> for Policy {
    type Error = PolicyError;

    fn try_from(w: PolicyWire) -> Result<Self, Self::Error> {
        Policy::new(w.itn_coverage, w.irs_coverage)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyError {
    CoverageOutOfRange { field: &'static str, value: f64 },
    BadStep { step: f64 },
}

impl fmt::Display for PolicyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyError::CoverageOutOfRange { field, value } => {
                write!(f, "{field} must lie in [0, 1], got {value}")
            }
            PolicyError::BadStep { step } => write!(
                f,
                "grid step must divide 1 into at most 1000 equal parts, got {step}"
            ),
        }
    }
}

impl core::error::Error for PolicyError {}
