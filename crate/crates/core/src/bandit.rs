//! Multi-armed bandit strategies over the policy grid.
//!
//! Each grid policy is an arm. Rewards are negated, capped costs per DALY
//! averted — `reward = -min(cost_per_daly_averted, reward_cap)`, with
//! `INEFFECTIVE` priced at the cap — so maximizing reward minimizes cost
//! per DALY averted and the sentinel cannot drag a mean to minus infinity.
//! Regret is accounted against the expectation-mode oracle surface, which
//! is exact for the model's mean dynamics.
//!
//! Three strategies, all tie-breaking to the lowest arm index:
//!
//! * ε-greedy with a decaying schedule `ε_t = epsilon0 / sqrt(t)`; unpulled
//!   arms count as mean +∞, so the greedy branch is optimistic.
//! * UCB1: lowest-indexed unpulled arm first, then
//!   `argmax mean + ucb_c * sqrt(2 ln t / count)`. Fully deterministic.
//! * Thompson sampling under a Normal prior with known sampling variance:
//!   one posterior draw per arm per round.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::econ::{CostPerDaly, EconSummary};
use crate::evaluate::{EvalError, Evaluator, OracleSurface};
use crate::policy::Policy;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    EpsilonGreedy,
    Ucb1,
    Thompson,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::EpsilonGreedy => "epsilon_greedy",
            Strategy::Ucb1 => "ucb1",
            Strategy::Thompson => "thompson",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub strategy: Strategy,
    /// Total pulls.
    pub budget: u32,
    /// Initial exploration rate for ε-greedy.
    pub epsilon0: f64,
    /// Exploration coefficient for UCB1.
    pub ucb_c: f64,
    pub prior_mean: f64,
    pub prior_strength: f64,
    pub prior_variance: f64,
    pub rng_seed: u64,
    /// R_max: caps the cost per DALY averted entering rewards.
    pub reward_cap: f64,
}

impl BanditConfig {
    /// Standard knobs for a run shape: ε₀ = 0.5, ucb_c = 1, a diffuse
    /// zero-mean prior, and a 10000 reward cap.
    pub fn new(strategy: Strategy, budget: u32, rng_seed: u64) -> Self {
        BanditConfig {
            strategy,
            budget,
            epsilon0: 0.5,
            ucb_c: 1.0,
            prior_mean: 0.0,
            prior_strength: 1.0,
            prior_variance: 1e6,
            rng_seed,
            reward_cap: 10_000.0,
        }
    }

    pub fn validate(&self, arm_count: usize) -> Result<(), BanditError> {
        if arm_count == 0 {
            return Err(BanditError::NoArms);
        }
        check("epsilon0", self.epsilon0, self.epsilon0 >= 0.0, "finite and >= 0")?;
        check("ucb_c", self.ucb_c, self.ucb_c >= 0.0, "finite and >= 0")?;
        check("prior_mean", self.prior_mean, true, "finite")?;
        check(
            "prior_strength",
            self.prior_strength,
            self.prior_strength > 0.0,
            "finite and > 0",
        )?;
        check(
            "prior_variance",
            self.prior_variance,
            self.prior_variance >= 0.0,
            "finite and >= 0",
        )?;
        check("reward_cap", self.reward_cap, self.reward_cap > 0.0, "finite and > 0")?;
        if self.strategy == Strategy::Ucb1 && (self.budget as usize) < arm_count {
            return Err(BanditError::BudgetBelowArms {
                budget: self.budget,
                arms: arm_count,
            });
        }
        Ok(())
    }
}

fn check(field: &'static str, value: f64, in_range: bool, requirement: &'static str) -> Result<(), BanditError> {
    if value.is_finite() && in_range {
        Ok(())
    } else {
        Err(BanditError::BadParameter {
            field,
            value,
            requirement,
        })
    }
}

/// Per-arm pull statistics, maintained by Welford's online algorithm.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmState {
    pub arm_index: usize,
    pub policy: Policy,
    pub count: u64,
    pub mean: f64,
    /// Running sum of squared deviations.
    pub m2: f64,
}

impl ArmState {
    pub fn new(arm_index: usize, policy: Policy) -> Self {
        ArmState {
            arm_index,
            policy,
            count: 0,
            mean: 0.0,
            m2: 0.0,
        }
    }

    pub fn record(&mut self, reward: f64) {
        self.count += 1;
        let delta = reward - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (reward - self.mean);
    }

    /// Sample variance (n−1 denominator); `None` below two pulls.
    pub fn variance(&self) -> Option<f64> {
        (self.count >= 2).then(|| self.m2 / (self.count - 1) as f64)
    }
}

/// Maps an economic summary to a bandit reward in `[-cap, 0)`.
pub fn reward_from(summary: &EconSummary, reward_cap: f64) -> f64 {
    match summary.cost_per_daly_averted {
        CostPerDaly::Finite(v) => -v.min(reward_cap),
        CostPerDaly::Ineffective => -reward_cap,
    }
}

/// ε-greedy with `ε_t = epsilon0 / sqrt(t)`.
///
/// Always consumes one uniform for the branch decision and a second only
/// when exploring, so draw counts depend on nothing but the branch taken.
pub fn select_epsilon_greedy(arms: &[ArmState], t: u32, config: &BanditConfig, rng: &mut SplitMix64) -> usize {
    let epsilon = config.epsilon0 / libm::sqrt(f64::from(t));
    if rng.uniform() < epsilon {
        rng.below(arms.len() as u64) as usize
    } else {
        greedy_index(arms)
    }
}

/// UCB1: unpulled arms first (lowest index), then the index bound.
pub fn select_ucb1(arms: &[ArmState], t: u32, config: &BanditConfig) -> usize {
    if let Some(i) = arms.iter().position(|a| a.count == 0) {
        return i;
    }
    let ln_t = libm::log(f64::from(t));
    argmax(arms.iter().map(|a| {
        a.mean + config.ucb_c * libm::sqrt(2.0 * ln_t / a.count as f64)
    }))
}

/// Thompson sampling: one posterior draw per arm, in arm order (exactly
/// `arms.len()` normals per call), argmax of the draws.
pub fn select_thompson(arms: &[ArmState], config: &BanditConfig, rng: &mut SplitMix64) -> usize {
    let mut best = 0;
    let mut best_sample = f64::NEG_INFINITY;
    for (i, arm) in arms.iter().enumerate() {
        let n = arm.count as f64;
        let posterior_mean =
            (config.prior_strength * config.prior_mean + n * arm.mean) / (config.prior_strength + n);
        let posterior_variance = config.prior_variance / (config.prior_strength + n);
        let sample = posterior_mean + libm::sqrt(posterior_variance) * rng.normal();
        if sample > best_sample {
            best = i;
            best_sample = sample;
        }
    }
    best
}

fn greedy_index(arms: &[ArmState]) -> usize {
    argmax(
        arms.iter()
            .map(|a| if a.count == 0 { f64::INFINITY } else { a.mean }),
    )
}

/// First index of the maximum (strict `>` keeps the earliest on ties).
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize)]
pub struct PullRecord {
    pub t: u32,
    pub arm_index: usize,
    pub policy: Policy,
    pub reward: f64,
    /// μ* − μ(chosen arm), from the oracle surface.
    pub regret: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BanditReport {
    pub strategy: Strategy,
    pub budget: u32,
    pub arms: Vec<ArmState>,
    pub pulls: Vec<PullRecord>,
    pub cumulative_regret: Vec<f64>,
    pub total_regret: f64,
    /// Argmax of empirical mean among pulled arms.
    pub best_policy: Option<Policy>,
    /// True when the evaluator failed mid-run and the report is partial.
    pub incomplete: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abort_reason: Option<String>,
}

/// Runs one bandit search: select per strategy, evaluate, update the arm
/// by Welford, account regret against the oracle. An evaluator timeout (or
/// failure) stops the run and returns the partial report flagged
/// `incomplete` rather than discarding completed pulls.
pub fn run_bandit(
    config: &BanditConfig,
    evaluator: &mut dyn Evaluator,
    oracle: &OracleSurface,
) -> Result<BanditReport, BanditError> {
    config.validate(oracle.entries.len())?;
    let mut arms: Vec<ArmState> = oracle
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| ArmState::new(i, e.policy))
        .collect();
    let mut rng = SplitMix64::new(config.rng_seed);
    let mu_star = oracle.mu_star();

    let mut pulls = Vec::with_capacity(config.budget as usize);
    let mut cumulative_regret = Vec::with_capacity(config.budget as usize);
    let mut total_regret = 0.0;
    let mut incomplete = false;
    let mut abort_reason = None;

    for t in 1..=config.budget {
        let arm_index = match config.strategy {
            Strategy::EpsilonGreedy => select_epsilon_greedy(&arms, t, config, &mut rng),
            Strategy::Ucb1 => select_ucb1(&arms, t, config),
            Strategy::Thompson => select_thompson(&arms, config, &mut rng),
        };
        let policy = arms[arm_index].policy;
        let summary = match evaluator.evaluate(&policy) {
            Ok(s) => s,
            Err(e @ EvalError::Timeout { .. }) | Err(e @ EvalError::Failed { .. }) => {
                incomplete = true;
                abort_reason = Some(e.to_string());
                break;
            }
        };
        let reward = reward_from(&summary, config.reward_cap);
        arms[arm_index].record(reward);
        let regret = mu_star - oracle.entries[arm_index].expected_reward;
        total_regret += regret;
        pulls.push(PullRecord {
            t,
            arm_index,
            policy,
            reward,
            regret,
        });
        cumulative_regret.push(total_regret);
    }

    let best_policy = arms
        .iter()
        .filter(|a| a.count > 0)
        .fold(None::<&ArmState>, |best, a| match best {
            Some(b) if b.mean >= a.mean => Some(b),
            _ => Some(a),
        })
        .map(|a| a.policy);

    Ok(BanditReport {
        strategy: config.strategy,
        budget: config.budget,
        arms,
        pulls,
        cumulative_regret,
        total_regret,
        best_policy,
        incomplete,
        abort_reason,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum BanditError {
    NoArms,
    /// UCB1 must be able to initialize every arm once.
    BudgetBelowArms {
        budget: u32,
        arms: usize,
    },
    BadParameter {
        field: &'static str,
        value: f64,
        requirement: &'static str,
    },
}

impl fmt::Display for BanditError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BanditError::NoArms => f.write_str("the policy grid has no arms"),
            BanditError::BudgetBelowArms { budget, arms } => write!(
                f,
                "ucb1 needs budget >= arms to initialize every arm once, got budget {budget} for {arms} arms"
            ),
            BanditError::BadParameter {
                field,
                value,
                requirement,
            } => write!(f, "{field} must be {requirement}, got {value}"),
        }
    }
}

impl core::error::Error for BanditError {}
