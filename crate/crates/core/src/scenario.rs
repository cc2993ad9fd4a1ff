//! Scenario documents: the unit of work exchanged between clerk and workers.
//!
//! A scenario pins everything a run needs — policy, epidemiology,
//! intervention effects, horizon, seed, mode — and is identified by the
//! SHA-256 of its canonical body (see [`crate::canonical`]). Identity is by
//! content: equal parameters give equal ids wherever they are computed, and
//! a document altered in transit no longer matches its id.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::canonical;
use crate::policy::{Policy, PolicyError};

/// Epidemiological and demographic parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpiParameters {
    /// Mosquitoes per human.
    pub m: f64,
    /// Bites per mosquito per day.
    pub a: f64,
    /// Probability of mosquito-to-human transmission per infectious bite.
    pub b: f64,
    /// Probability of human-to-mosquito transmission per bite on an
    /// infectious human.
    pub c: f64,
    /// Mosquito mortality rate per day.
    pub g: f64,
    /// Extrinsic incubation period in days.
    pub n_eip: f64,
    /// Human recovery rate per day.
    pub r: f64,
    /// Human population count.
    pub population: u64,
    /// Case fatality ratio.
    pub cfr: f64,
    /// Disability weight per clinical episode.
    pub disability_weight: f64,
    /// Days per clinical episode.
    pub episode_duration_days: f64,
    /// Years of life lost per death.
    pub yll_per_death: f64,
}

impl Default for EpiParameters {
    fn default() -> Self {
        EpiParameters {
            m: 20.0,
            a: 0.3,
            b: 0.5,
            c: 0.5,
            g: 0.1,
            n_eip: 10.0,
            r: 0.01,
            population: 10_000,
            cfr: 0.003,
            disability_weight: 0.2,
            episode_duration_days: 14.0,
            yll_per_death: 30.0,
        }
    }
}

impl EpiParameters {
    /// All rates and probabilities must be finite and strictly positive,
    /// probabilities at most 1, and population at least 1.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        positive("epi.m", self.m)?;
        positive("epi.a", self.a)?;
        probability("epi.b", self.b)?;
        probability("epi.c", self.c)?;
        positive("epi.g", self.g)?;
        positive("epi.n_eip", self.n_eip)?;
        positive("epi.r", self.r)?;
        probability("epi.cfr", self.cfr)?;
        probability("epi.disability_weight", self.disability_weight)?;
        positive("epi.episode_duration_days", self.episode_duration_days)?;
        positive("epi.yll_per_death", self.yll_per_death)?;
        if self.population == 0 {
            return Err(ScenarioError::EmptyPopulation);
        }
        Ok(())
    }
}

/// How interventions modify transmission, and what they cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionEffects {
    /// Fractional biting reduction at full ITN coverage, in `[0, 1]`.
    pub kappa_bite: f64,
    /// Fractional mosquito-mortality increase at full ITN coverage.
    pub kappa_kill_itn: f64,
    /// Fractional mosquito-mortality increase at full IRS coverage.
    pub kappa_kill_irs: f64,
    /// Currency per person-year of ITN coverage.
    pub unit_cost_itn: f64,
    /// Currency per person-year of IRS coverage.
    pub unit_cost_irs: f64,
}

impl Default for InterventionEffects {
    fn default() -> Self {
        InterventionEffects {
            kappa_bite: 0.5,
            kappa_kill_itn: 0.44,
            kappa_kill_irs: 0.6,
            unit_cost_itn: 2.5,
            unit_cost_irs: 5.0,
        }
    }
}

impl InterventionEffects {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        fraction("effects.kappa_bite", self.kappa_bite)?;
        non_negative("effects.kappa_kill_itn", self.kappa_kill_itn)?;
        non_negative("effects.kappa_kill_irs", self.kappa_kill_irs)?;
        non_negative("effects.unit_cost_itn", self.unit_cost_itn)?;
        non_negative("effects.unit_cost_irs", self.unit_cost_irs)?;
        Ok(())
    }
}

/// Whether a run draws stochastic counts or advances by their expectations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Stochastic,
    Expectation,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Stochastic => "stochastic",
            Mode::Expectation => "expectation",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A fully specified simulation task, identified by its content hash.
///
/// Deserialization validates every parameter, so a `ScenarioDocument` in
/// hand always satisfies the field constraints. It does *not* check that
/// `scenario_id` matches the content — workers do that explicitly via
/// [`ScenarioDocument::id_is_valid`] so tampering yields a reported error
/// rather than a silent parse failure upstream.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "ScenarioDocumentWire")]
pub struct ScenarioDocument {
    pub scenario_id: String,
    pub policy: Policy,
    pub epi: EpiParameters,
    pub effects: InterventionEffects,
    pub horizon_days: u32,
    pub seed: u64,
    pub mode: Mode,
}

impl ScenarioDocument {
    /// Builds a document, validating parameters and computing its id.
    pub fn new(
        policy: Policy,
        epi: EpiParameters,
        effects: InterventionEffects,
        horizon_days: u32,
        seed: u64,
        mode: Mode,
    ) -> Result<Self, ScenarioError> {
        epi.validate()?;
        effects.validate()?;
        let mut doc = ScenarioDocument {
            scenario_id: String::new(),
            policy,
            epi,
            effects,
            horizon_days,
            seed,
            mode,
        };
        doc.scenario_id = doc.computed_id();
        Ok(doc)
    }

    /// Canonical JSON of everything except `scenario_id` — the hash input.
    pub fn canonical_body(&self) -> String {
        canonical::scenario_body(self)
    }

    /// Canonical JSON of the full document, id included.
    pub fn canonical_json(&self) -> String {
        canonical::scenario_document(self)
    }

    /// The id this document's content hashes to.
    pub fn computed_id(&self) -> String {
        canonical::sha256_hex(self.canonical_body().as_bytes())
    }

    /// Whether `scenario_id` matches the content hash.
    pub fn id_is_valid(&self) -> bool {
        self.scenario_id == self.computed_id()
    }
}

#[derive(Deserialize)]
struct ScenarioDocumentWire {
    scenario_id: String,
    policy: Policy,
    epi: EpiParameters,
    effects: InterventionEffects,
    horizon_days: u32,
    seed: u64,
    mode: Mode,
}

impl TryFrom<ScenarioDocumentWire> for ScenarioDocument {
    type Error = ScenarioError;

    fn try_from(w: ScenarioDocumentWire) -> Result<Self, Self::Error> {
        w.epi.validate()?;
        w.effects.validate()?;
        Ok(ScenarioDocument {
            scenario_id: w.scenario_id,
            policy: w.policy,
            epi: w.epi,
            effects: w.effects,
            horizon_days: w.horizon_days,
            seed: w.seed,
            mode: w.mode,
        })
    }
}

/// Everything needed to germinate scenario documents for any policy:
/// shared parameters plus the seeding and replication scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeedTemplate {
    pub epi: EpiParameters,
    pub effects: InterventionEffects,
    pub horizon_days: u32,
    pub mode: Mode,
    pub base_seed: u64,
    pub replicates: u32,
}

impl Default for SeedTemplate {
    fn default() -> Self {
        SeedTemplate {
            epi: EpiParameters::default(),
            effects: InterventionEffects::default(),
            horizon_days: 1095,
            mode: Mode::Stochastic,
            base_seed: 42,
            replicates: 1,
        }
    }
}

impl SeedTemplate {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.epi.validate()?;
        self.effects.validate()?;
        if self.replicates == 0 {
            return Err(ScenarioError::NoReplicates);
        }
        Ok(())
    }

    /// Replicate count after mode rules: expectation mode is deterministic,
    /// so it always runs exactly one replicate.
    pub fn effective_replicates(&self) -> u32 {
        match self.mode {
            Mode::Expectation => 1,
            Mode::Stochastic => self.replicates,
        }
    }

    /// Germinates the document for `policy`, replicate `replicate_index`.
    ///
    /// Replicate seeds are `base_seed + index` (wrapping), so replicate `i`
    /// of every policy shares its seed with baseline replicate `i` — common
    /// random numbers for paired comparisons.
    pub fn germinate(&self, policy: Policy, replicate_index: u32) -> Result<ScenarioDocument, ScenarioError> {
        self.validate()?;
        let n = self.effective_replicates();
        if replicate_index >= n {
            return Err(ScenarioError::ReplicateOutOfRange {
                index: replicate_index,
                replicates: n,
            });
        }
        ScenarioDocument::new(
            policy,
            self.epi.clone(),
            self.effects.clone(),
            self.horizon_days,
            self.base_seed.wrapping_add(u64::from(replicate_index)),
            self.mode,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioError {
    /// A numeric field failed its range requirement.
    BadField {
        field: &'static str,
        value: f64,
        requirement: &'static str,
    },
    /// Population must be at least 1.
    EmptyPopulation,
    /// A template must request at least one replicate.
    NoReplicates,
    ReplicateOutOfRange {
        index: u32,
        replicates: u32,
    },
    Policy(PolicyError),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::BadField {
                field,
                value,
                requirement,
            } => write!(f, "{field} must be {requirement}, got {value}"),
            ScenarioError::EmptyPopulation => f.write_str("epi.population must be at least 1"),
            ScenarioError::NoReplicates => f.write_str("replicates must be at least 1"),
            ScenarioError::ReplicateOutOfRange { index, replicates } => {
                write!(f, "replicate index {index} out of range for {replicates} replicate(s)")
            }
            ScenarioError::Policy(e) => e.fmt(f),
        }
    }
}

impl core::error::Error for ScenarioError {}

impl From<PolicyError> for ScenarioError {
    fn from(e: PolicyError) -> Self {
        ScenarioError::Policy(e)
    }
}

fn positive(field: &'static str, value: f64) -> Result<(), ScenarioError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::BadField {
            field,
            value,
            requirement: "finite and strictly positive",
        })
    }
}

fn probability(field: &'static str, value: f64) -> Result<(), ScenarioError> {
    if value.is_finite() && value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(ScenarioError::BadField {
            field,
            value,
            requirement: "a probability in (0, 1]",
        })
    }
}

fn fraction(field: &'static str, value: f64) -> Result<(), ScenarioError> {
    if value.is_finite() && (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(ScenarioError::BadField {
            field,
            value,
            requirement: "a fraction in [0, 1]",
        })
    }
}

fn non_negative(field: &'static str, value: f64) -> Result<(), ScenarioError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::BadField {
            field,
            value,
            requirement: "finite and non-negative",
        })
    }
}
