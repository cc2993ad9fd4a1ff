//! Core engine for malaria policy evaluation: scenario documents with
//! canonical hashing, a Ross-Macdonald-style transmission surrogate, cost
//! per DALY averted economics, and bandit search over intervention
//! policies.
//!
//! The crate is `no_std` (with `alloc`) and fully deterministic: all
//! transcendentals go through `libm`, randomness through [`SplitMix64`],
//! and identical seeds reproduce identical trajectories on any platform.
//! IO, the message fabric, and the CLI live in the companion `polisim`
//! crate.
#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod bandit;
pub mod canonical;
pub mod econ;
pub mod evaluate;
pub mod model;
pub mod policy;
pub mod result;
pub mod rng;
pub mod scenario;

pub use bandit::{ArmState, BanditConfig, BanditError, BanditReport, PullRecord, Strategy};
pub use econ::{CostPerDaly, EconSummary};
pub use evaluate::{
    EvalError, Evaluator, ExpectationEvaluator, OracleEntry, OracleSurface, StochasticEvaluator,
};
pub use model::{
    effective_rates, equilibrium_prevalence, simulate, EffectiveRates, SimOutput, SimState,
};
pub use policy::{Coverage, Policy, PolicyError};
pub use result::EvaluationResult;
pub use rng::SplitMix64;
pub use scenario::{
    EpiParameters, InterventionEffects, Mode, ScenarioDocument, ScenarioError, SeedTemplate,
};
