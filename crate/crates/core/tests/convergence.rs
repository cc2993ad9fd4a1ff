//! Bandit behavior on real evaluators: argmax recovery on the
//! deterministic environment, regret against a uniform-random baseline on
//! the stochastic one, and reproducibility of full runs.

use polisim_core::{
    bandit::{run_bandit, BanditConfig},
    evaluate::{oracle_surface, ExpectationEvaluator, OracleSurface, StochasticEvaluator},
    SeedTemplate, Strategy,
};

const STRATEGIES: [Strategy; 3] = [Strategy::EpsilonGreedy, Strategy::Ucb1, Strategy::Thompson];

/// Expected cumulative regret of picking arms uniformly at random.
fn uniform_baseline_regret(surface: &OracleSurface, budget: u32) -> f64 {
    let mean_gap = surface
        .entries
        .iter()
        .map(|e| surface.mu_star() - e.expected_reward)
        .sum::<f64>()
        / surface.entries.len() as f64;
    f64::from(budget) * mean_gap
}

#[test]
fn every_strategy_recovers_the_argmax_on_the_deterministic_grid() {
    let template = SeedTemplate::default();
    let surface = oracle_surface(&template, 0.5, 10_000.0).unwrap();
    let arms = surface.entries.len() as u32;
    assert_eq!(arms, 9);
    let budget = 10 * arms;

    for strategy in STRATEGIES {
        let mut hits = 0;
        for seed in 0..20u64 {
            let mut evaluator = ExpectationEvaluator::new(&template).unwrap();
            let config = BanditConfig::new(strategy, budget, seed);
            let report = run_bandit(&config, &mut evaluator, &surface).unwrap();
            assert!(!report.incomplete);
            assert_eq!(report.pulls.len(), budget as usize);
            if report.best_policy == Some(surface.best().policy) {
                hits += 1;
            }
        }
        assert!(hits >= 18, "{strategy}: {hits}/20 runs found the argmax");
    }
}

#[test]
fn adaptive_strategies_beat_uniform_sampling_on_the_stochastic_grid() {
    let template = SeedTemplate::default();
    let surface = oracle_surface(&template, 0.5, 10_000.0).unwrap();
    let budget = 200;
    let baseline = uniform_baseline_regret(&surface, budget);

    for strategy in [Strategy::Ucb1, Strategy::Thompson] {
        let mut total = 0.0;
        let seeds = 4u64;
        for seed in 0..seeds {
            let mut evaluator = StochasticEvaluator::new(&template, seed ^ 0x5eed_5eed).unwrap();
            let config = BanditConfig::new(strategy, budget, seed);
            let report = run_bandit(&config, &mut evaluator, &surface).unwrap();
            assert!(!report.incomplete);
            total += report.total_regret;
        }
        let mean_regret = total / seeds as f64;
        assert!(
            mean_regret < 0.75 * baseline,
            "{strategy}: mean regret {mean_regret} vs uniform {baseline}"
        );
    }
}

#[test]
fn bandit_runs_are_reproducible_end_to_end() {
    let template = SeedTemplate::default();
    let surface = oracle_surface(&template, 0.5, 10_000.0).unwrap();
    for strategy in STRATEGIES {
        let run = || {
            let mut evaluator = StochasticEvaluator::new(&template, 7).unwrap();
            let config = BanditConfig::new(strategy, 50, 11);
            run_bandit(&config, &mut evaluator, &surface).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.total_regret, b.total_regret, "{strategy}");
        let pulls_a: Vec<(u32, usize)> = a.pulls.iter().map(|p| (p.t, p.arm_index)).collect();
        let pulls_b: Vec<(u32, usize)> = b.pulls.iter().map(|p| (p.t, p.arm_index)).collect();
        assert_eq!(pulls_a, pulls_b, "{strategy}");
        let rewards_a: Vec<f64> = a.pulls.iter().map(|p| p.reward).collect();
        let rewards_b: Vec<f64> = b.pulls.iter().map(|p| p.reward).collect();
        assert_eq!(rewards_a, rewards_b, "{strategy}");
    }
}

#[test]
fn exploration_visits_every_arm_given_enough_budget() {
    let template = SeedTemplate::default();
    let surface = oracle_surface(&template, 0.5, 10_000.0).unwrap();
    for strategy in STRATEGIES {
        let mut evaluator = ExpectationEvaluator::new(&template).unwrap();
        let config = BanditConfig::new(strategy, 90, 3);
        let report = run_bandit(&config, &mut evaluator, &surface).unwrap();
        for arm in &report.arms {
            assert!(
                arm.count > 0,
                "{strategy}: arm {} ({}) never pulled",
                arm.arm_index,
                arm.policy
            );
        }
    }
}
