//! Health economics: DALYs, intervention cost, and cost per DALY averted
//! against the zero-intervention baseline.
//!
//! The DALY load decomposes into morbidity and mortality:
//!
//! ```text
//! dalys = cases * disability_weight * (episode_duration_days / 365)
//!       + cases * cfr * yll_per_death
//! ```
//!
//! Intervention cost is person-years of coverage at the unit prices:
//!
//! ```text
//! cost = population * (horizon_days / 365)
//!      * (itn_coverage * unit_cost_itn + irs_coverage * unit_cost_irs)
//! ```
//!
//! Neither uses discounting; the horizons here are a few years. A policy
//! that averts nothing (or worse) gets the `INEFFECTIVE` sentinel rather
//! than a division by zero — an ordinary, serializable value that sorts
//! after every finite cost.

use core::cmp::Ordering;
use core::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::policy::Policy;
use crate::scenario::{EpiParameters, InterventionEffects};

/// Cost per DALY averted: a positive finite value, or `INEFFECTIVE` for
/// policies that avert nothing.
///
/// Serializes as a JSON number, or the string `"INEFFECTIVE"`. Ordering is
/// by value with `INEFFECTIVE` greater than everything finite, so sorting
/// ascending puts the best value first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostPerDaly {
    Finite(f64),
    Ineffective,
}

impl CostPerDaly {
    pub fn is_ineffective(self) -> bool {
        matches!(self, CostPerDaly::Ineffective)
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            CostPerDaly::Finite(v) => Some(v),
            CostPerDaly::Ineffective => None,
        }
    }
}

impl Eq for CostPerDaly {}

impl PartialOrd for CostPerDaly {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CostPerDaly {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (CostPerDaly::Finite(a), CostPerDaly::Finite(b)) => a.total_cmp(b),
            (CostPerDaly::Finite(_), CostPerDaly::Ineffective) => Ordering::Less,
            (CostPerDaly::Ineffective, CostPerDaly::Finite(_)) => Ordering::Greater,
            (CostPerDaly::Ineffective, CostPerDaly::Ineffective) => Ordering::Equal,
        }
    }
}

impl fmt::Display for CostPerDaly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostPerDaly::Finite(v) => write!(f, "{v}"),
            CostPerDaly::Ineffective => f.write_str("INEFFECTIVE"),
        }
    }
}

impl Serialize for CostPerDaly {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            CostPerDaly::Finite(v) => serializer.serialize_f64(*v),
            CostPerDaly::Ineffective => serializer.serialize_str("INEFFECTIVE"),
        }
    }
}

impl<'de> Deserialize<'de> for CostPerDaly {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct CpdVisitor;

        impl<'de> Visitor<'de> for CpdVisitor {
            type Value = CostPerDaly;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a number or the string \"INEFFECTIVE\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> Result<CostPerDaly, E> {
                Ok(CostPerDaly::Finite(v))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<CostPerDaly, E> {
                Ok(CostPerDaly::Finite(v as f64))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<CostPerDaly, E> {
                Ok(CostPerDaly::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<CostPerDaly, E> {
                if v == "INEFFECTIVE" {
                    Ok(CostPerDaly::Ineffective)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(CpdVisitor)
    }
}

/// Economic outcome of one policy evaluation against the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EconSummary {
    pub dalys: f64,
    pub cost: f64,
    pub dalys_averted: f64,
    pub cost_per_daly_averted: CostPerDaly,
}

/// Total DALYs for a case load under the given parameters.
pub fn dalys(total_cases: f64, epi: &EpiParameters) -> f64 {
    total_cases * epi.disability_weight * (epi.episode_duration_days / 365.0)
        + total_cases * epi.cfr * epi.yll_per_death
}

/// Intervention cost of holding `policy` for `horizon_days` over the whole
/// population.
pub fn policy_cost(
    policy: &Policy,
    epi: &EpiParameters,
    effects: &InterventionEffects,
    horizon_days: u32,
) -> f64 {
    let per_person_year = policy.itn_coverage.value() * effects.unit_cost_itn
        + policy.irs_coverage.value() * effects.unit_cost_irs;
    epi.population as f64 * (f64::from(horizon_days) / 365.0) * per_person_year
}

/// Combines a policy run with its baseline into an [`EconSummary`]. The
/// baseline must come from identical parameters, horizon, and mode (and
/// the same seed in stochastic mode).
pub fn cost_effectiveness(
    policy_cases: f64,
    policy_cost: f64,
    baseline_cases: f64,
    epi: &EpiParameters,
) -> EconSummary {
    let policy_dalys = dalys(policy_cases, epi);
    let averted = dalys(baseline_cases, epi) - policy_dalys;
    let cpda = if averted > 0.0 {
        CostPerDaly::Finite(policy_cost / averted)
    } else {
        CostPerDaly::Ineffective
    };
    EconSummary {
        dalys: policy_dalys,
        cost: policy_cost,
        dalys_averted: averted,
        cost_per_daly_averted: cpda,
    }
}

/// Mean of replicate summaries: plain means of the additive fields, and the
/// cost-per-DALY recomputed as the mean over *effective* replicates only.
/// All replicates ineffective (or none at all) gives `INEFFECTIVE`.
pub fn aggregate_summaries(replicates: &[EconSummary]) -> EconSummary {
    let n = replicates.len() as f64;
    if replicates.is_empty() {
        return EconSummary {
            dalys: 0.0,
            cost: 0.0,
            dalys_averted: 0.0,
            cost_per_daly_averted: CostPerDaly::Ineffective,
        };
    }
    let mut dalys_sum = 0.0;
    let mut cost_sum = 0.0;
    let mut averted_sum = 0.0;
    let mut cpda_sum = 0.0;
    let mut effective = 0u32;
    for s in replicates {
        dalys_sum += s.dalys;
        cost_sum += s.cost;
        averted_sum += s.dalys_averted;
        if let CostPerDaly::Finite(v) = s.cost_per_daly_averted {
            cpda_sum += v;
            effective += 1;
        }
    }
    let cpda = if effective > 0 {
        CostPerDaly::Finite(cpda_sum / f64::from(effective))
    } else {
        CostPerDaly::Ineffective
    };
    EconSummary {
        dalys: dalys_sum / n,
        cost: cost_sum / n,
        dalys_averted: averted_sum / n,
        cost_per_daly_averted: cpda,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rel_close(got: f64, want: f64, tol: f64) -> bool {
        (got - want).abs() <= tol * want.abs().max(1.0)
    }

    #[test]
    fn dalys_zero_cases_is_zero() {
        assert_eq!(dalys(0.0, &EpiParameters::default()), 0.0);
    }

    #[test]
    fn dalys_example_is_pinned() {
        let got = dalys(1000.0, &EpiParameters::default());
        assert!(rel_close(got, 97.67123287671232, 1e-9), "dalys = {got}");
    }

    #[test]
    fn dalys_is_linear() {
        let epi = EpiParameters::default();
        for k in [1.0, 10.0, 123.25, 5000.0] {
            let d = dalys(k, &epi);
            assert!(rel_close(dalys(2.0 * k, &epi), 2.0 * d, 1e-12));
        }
    }

    #[test]
    fn zero_policy_costs_nothing() {
        let cost = policy_cost(
            &Policy::ZERO,
            &EpiParameters::default(),
            &InterventionEffects::default(),
            1095,
        );
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn full_policy_cost_is_pinned() {
        let cost = policy_cost(
            &Policy::new(1.0, 1.0).unwrap(),
            &EpiParameters::default(),
            &InterventionEffects::default(),
            1095,
        );
        assert!(rel_close(cost, 225_000.0, 1e-12), "cost = {cost}");
    }

    #[test]
    fn cost_is_linear_in_each_coverage() {
        let epi = EpiParameters::default();
        let effects = InterventionEffects::default();
        let base = policy_cost(&Policy::new(0.2, 0.0).unwrap(), &epi, &effects, 365);
        let double = policy_cost(&Policy::new(0.4, 0.0).unwrap(), &epi, &effects, 365);
        assert!(rel_close(double, 2.0 * base, 1e-12));

        let combined = policy_cost(&Policy::new(0.2, 0.3).unwrap(), &epi, &effects, 365);
        let irs_only = policy_cost(&Policy::new(0.0, 0.3).unwrap(), &epi, &effects, 365);
        assert!(rel_close(combined, base + irs_only, 1e-12));
    }

    #[test]
    fn cost_effectiveness_example_is_pinned() {
        let summary = cost_effectiveness(500.0, 10_000.0, 1000.0, &EpiParameters::default());
        assert!(rel_close(summary.dalys_averted, 48.83561643835616, 1e-9));
        let cpda = summary.cost_per_daly_averted.finite().unwrap();
        assert!(rel_close(cpda, 204.7685834502104, 1e-9), "cpda = {cpda}");
    }

    #[test]
    fn self_comparison_is_ineffective() {
        let summary = cost_effectiveness(1000.0, 0.0, 1000.0, &EpiParameters::default());
        assert_eq!(summary.dalys_averted, 0.0);
        assert_eq!(summary.cost_per_daly_averted, CostPerDaly::Ineffective);
    }

    #[test]
    fn more_cases_than_baseline_is_ineffective() {
        let summary = cost_effectiveness(1200.0, 5_000.0, 1000.0, &EpiParameters::default());
        assert!(summary.dalys_averted < 0.0);
        assert!(summary.cost_per_daly_averted.is_ineffective());
    }

    #[test]
    fn unit_cost_scaling_scales_cpda() {
        let epi = EpiParameters::default();
        let mut effects = InterventionEffects::default();
        let p = Policy::new(0.5, 0.5).unwrap();

        let cost1 = policy_cost(&p, &epi, &effects, 1095);
        let s1 = cost_effectiveness(500.0, cost1, 1000.0, &epi);

        effects.unit_cost_itn *= 3.0;
        effects.unit_cost_irs *= 3.0;
        let cost3 = policy_cost(&p, &epi, &effects, 1095);
        let s3 = cost_effectiveness(500.0, cost3, 1000.0, &epi);

        let (v1, v3) = (
            s1.cost_per_daly_averted.finite().unwrap(),
            s3.cost_per_daly_averted.finite().unwrap(),
        );
        assert!(rel_close(v3, 3.0 * v1, 1e-12));
    }

    #[test]
    fn sentinel_sorts_after_every_finite_value() {
        let mut values = vec![
            CostPerDaly::Ineffective,
            CostPerDaly::Finite(500.0),
            CostPerDaly::Finite(101.9),
            CostPerDaly::Finite(1.0e12),
        ];
        values.sort();
        assert_eq!(values[0], CostPerDaly::Finite(101.9));
        assert_eq!(values[3], CostPerDaly::Ineffective);
        assert!(CostPerDaly::Finite(f64::MAX) < CostPerDaly::Ineffective);
    }

    #[test]
    fn sentinel_serde_round_trips() {
        let json = serde_json::to_string(&CostPerDaly::Ineffective).unwrap();
        assert_eq!(json, r#""INEFFECTIVE""#);
        assert_eq!(
            serde_json::from_str::<CostPerDaly>(&json).unwrap(),
            CostPerDaly::Ineffective
        );
        assert_eq!(
            serde_json::from_str::<CostPerDaly>("204.77").unwrap(),
            CostPerDaly::Finite(204.77)
        );
        assert_eq!(
            serde_json::from_str::<CostPerDaly>("100").unwrap(),
            CostPerDaly::Finite(100.0)
        );
        assert!(serde_json::from_str::<CostPerDaly>(r#""bogus""#).is_err());
    }

    #[test]
    fn aggregation_averages_and_handles_ineffective() {
        let epi = EpiParameters::default();
        let a = cost_effectiveness(500.0, 10_000.0, 1000.0, &epi);
        let b = cost_effectiveness(700.0, 10_000.0, 1000.0, &epi);
        let agg = aggregate_summaries(&[a, b]);
        assert!(rel_close(agg.dalys, (a.dalys + b.dalys) / 2.0, 1e-12));
        let expect_cpda = (a.cost_per_daly_averted.finite().unwrap()
            + b.cost_per_daly_averted.finite().unwrap())
            / 2.0;
        assert!(rel_close(agg.cost_per_daly_averted.finite().unwrap(), expect_cpda, 1e-12));

        let dud = cost_effectiveness(1000.0, 10_000.0, 1000.0, &epi);
        let mixed = aggregate_summaries(&[a, dud]);
        assert_eq!(
            mixed.cost_per_daly_averted,
            a.cost_per_daly_averted,
            "ineffective replicates are excluded from the cpda mean"
        );

        let all_dud = aggregate_summaries(&[dud, dud]);
        assert!(all_dud.cost_per_daly_averted.is_ineffective());
    }
}
