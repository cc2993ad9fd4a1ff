//! Evaluation results: what a worker reports for one scenario.
//!
//! Workers fill every field except the baseline-relative pair
//! (`dalys_averted`, `cost_per_daly_averted`): those need the paired
//! baseline replicate, which only the clerk tracks, so the clerk completes
//! the record before storing it. Scenarios that cannot be simulated at all
//! still produce a result — zeros plus an `error` reason — so poison
//! payloads are quarantined as data instead of wedging a queue.

use alloc::string::{String, ToString};

use serde::Deserialize;

use crate::canonical;
use crate::econ::{self, CostPerDaly, EconSummary};
use crate::model::SimOutput;
use crate::policy::Policy;
use crate::scenario::{EpiParameters, ScenarioDocument};

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct EvaluationResult {
    pub scenario_id: String,
    pub policy: Policy,
    pub total_cases: f64,
    pub total_deaths: f64,
    pub dalys: f64,
    pub cost: f64,
    #[serde(default)]
    pub dalys_averted: Option<f64>,
    #[serde(default)]
    pub cost_per_daly_averted: Option<CostPerDaly>,
    pub wall_time_ms: u64,
    pub worker_id: String,
    #[serde(default)]
    pub error: Option<String>,
}

impl EvaluationResult {
    /// Worker-side constructor: simulation outputs plus the economics that
    /// need no baseline.
    pub fn from_simulation(
        doc: &ScenarioDocument,
        sim: &SimOutput,
        wall_time_ms: u64,
        worker_id: &str,
    ) -> Self {
        EvaluationResult {
            scenario_id: doc.scenario_id.clone(),
            policy: doc.policy,
            total_cases: sim.total_cases,
            total_deaths: sim.total_cases * doc.epi.cfr,
            dalys: econ::dalys(sim.total_cases, &doc.epi),
            cost: econ::policy_cost(&doc.policy, &doc.epi, &doc.effects, doc.horizon_days),
            dalys_averted: None,
            cost_per_daly_averted: None,
            wall_time_ms,
            worker_id: worker_id.to_string(),
            error: None,
        }
    }

    /// Error result for a scenario that could not be simulated, carrying
    /// whatever identity could be recovered from the payload.
    pub fn failed(scenario_id: String, policy: Policy, reason: String, worker_id: &str) -> Self {
        EvaluationResult {
            scenario_id,
            policy,
            total_cases: 0.0,
            total_deaths: 0.0,
            dalys: 0.0,
            cost: 0.0,
            dalys_averted: None,
            cost_per_daly_averted: None,
            wall_time_ms: 0,
            worker_id: worker_id.to_string(),
            error: Some(reason),
        }
    }

    /// Fills the baseline-relative fields from the paired baseline
    /// replicate's case count.
    pub fn complete_against_baseline(&mut self, baseline_cases: f64, epi: &EpiParameters) {
        let summary = econ::cost_effectiveness(self.total_cases, self.cost, baseline_cases, epi);
        self.dalys_averted = Some(summary.dalys_averted);
        self.cost_per_daly_averted = Some(summary.cost_per_daly_averted);
    }

    /// The economic summary, once completed against a baseline.
    pub fn econ_summary(&self) -> Option<EconSummary> {
        Some(EconSummary {
            dalys: self.dalys,
            cost: self.cost,
            dalys_averted: self.dalys_averted?,
            cost_per_daly_averted: self.cost_per_daly_averted?,
        })
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    /// Canonical record form; see [`crate::canonical`].
    pub fn canonical_json(&self) -> String {
        canonical::evaluation_result(self)
    }
}
