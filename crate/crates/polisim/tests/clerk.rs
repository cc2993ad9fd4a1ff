//! Clerk + worker integration over a live broker: cache semantics, paired
//! replicates, concurrent evaluation, and equivalence with the in-process
//! evaluators.

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use polisim::clerk::{Clerk, ClerkConfig, ClerkEvaluator};
use polisim::fabric::{serve, BrokerConfig, BrokerHandle};
use polisim::worker::{run_worker, WorkerConfig, WorkerStats};
use polisim_core::bandit::{run_bandit, BanditConfig, Strategy};
use polisim_core::econ::{self, aggregate_summaries};
use polisim_core::evaluate::oracle_surface;
use polisim_core::{model, Policy, SeedTemplate, StochasticEvaluator};

struct Rig {
    broker: Option<BrokerHandle>,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<WorkerStats>>,
}

impl Rig {
    /// A broker plus `n` worker threads, ready to serve a clerk.
    fn start(n: usize) -> Rig {
        let broker = serve(BrokerConfig::new("127.0.0.1:0".parse().unwrap())).unwrap();
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..n)
            .map(|i| {
                let config = WorkerConfig::new(broker.addr().to_string(), format!("w{i}"));
                let stop = Arc::clone(&stop);
                std::thread::spawn(move || run_worker(&config, &stop).unwrap())
            })
            .collect();
        Rig {
            broker: Some(broker),
            stop,
            workers,
        }
    }

    fn addr(&self) -> String {
        self.broker.as_ref().unwrap().addr().to_string()
    }

    fn stop(mut self) -> Vec<WorkerStats> {
        self.stop.store(true, Ordering::SeqCst);
        let stats = self.workers.drain(..).map(|w| w.join().unwrap()).collect();
        self.broker.take().unwrap().shutdown();
        stats
    }
}

impl Drop for Rig {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

fn template() -> SeedTemplate {
    SeedTemplate {
        horizon_days: 240,
        replicates: 4,
        ..SeedTemplate::default()
    }
}

fn clerk_config(rig: &Rig, store: &Path, template: SeedTemplate) -> ClerkConfig {
    let mut config = ClerkConfig::new(rig.addr(), store);
    config.template = template;
    config.task_timeout = Duration::from_secs(30);
    config
}

/// What the clerk should report for `policy`, derived independently by
/// running the same seeds in-process.
fn local_summary(template: &SeedTemplate, policy: Policy) -> polisim_core::EconSummary {
    let summaries: Vec<_> = (0..template.effective_replicates())
        .map(|i| {
            let cases = model::simulate(&template.germinate(policy, i).unwrap()).total_cases;
            let baseline = model::simulate(&template.germinate(Policy::ZERO, i).unwrap()).total_cases;
            let cost = econ::policy_cost(&policy, &template.epi, &template.effects, template.horizon_days);
            econ::cost_effectiveness(cases, cost, baseline, &template.epi)
        })
        .collect();
    aggregate_summaries(&summaries)
}

#[test]
fn four_replicates_mean_matches_an_independent_run() {
    let rig = Rig::start(2);
    let dir = tempfile::tempdir().unwrap();
    let template = template();
    let policy = Policy::new(0.6, 0.2).unwrap();

    let clerk = Clerk::start(clerk_config(&rig, &dir.path().join("s.jsonl"), template.clone())).unwrap();
    let summary = clerk.evaluate_policy(policy).unwrap();

    assert_eq!(summary, local_summary(&template, policy));
    assert_eq!(clerk.published_count(), 8, "4 baseline + 4 policy replicates");
    assert_eq!(clerk.store_counts(), (8, 8));
    clerk.shutdown();

    let stats = rig.stop();
    let processed: u64 = stats.iter().map(|s| s.processed).sum();
    assert_eq!(processed, 8);
    assert!(stats.iter().all(|s| s.errors == 0));
    assert!(stats.iter().all(|s| s.processed > 0), "both workers participated");
}

#[test]
fn reevaluation_is_answered_entirely_from_the_store() {
    let rig = Rig::start(1);
    let dir = tempfile::tempdir().unwrap();
    let store_path = dir.path().join("s.jsonl");
    let policy = Policy::new(0.3, 0.9).unwrap();

    let clerk = Clerk::start(clerk_config(&rig, &store_path, template())).unwrap();
    let first = clerk.evaluate_policy(policy).unwrap();
    let published = clerk.published_count();
    let bytes = std::fs::metadata(&store_path).unwrap().len();

    let second = clerk.evaluate_policy(policy).unwrap();
    assert_eq!(first, second);
    assert_eq!(clerk.published_count(), published, "no new tasks");
    assert_eq!(std::fs::metadata(&store_path).unwrap().len(), bytes, "no new records");
    clerk.shutdown();

    // A fresh clerk over the same store is just as warm.
    let clerk = Clerk::start(clerk_config(&rig, &store_path, template())).unwrap();
    assert_eq!(clerk.evaluate_policy(policy).unwrap(), first);
    assert_eq!(clerk.published_count(), 0);
    clerk.shutdown();
    rig.stop();
}

#[test]
fn zero_policy_is_ineffective_against_its_own_baseline() {
    let rig = Rig::start(1);
    let dir = tempfile::tempdir().unwrap();
    let clerk = Clerk::start(clerk_config(&rig, &dir.path().join("s.jsonl"), template())).unwrap();
    let summary = clerk.evaluate_policy(Policy::ZERO).unwrap();
    assert_eq!(summary.dalys_averted, 0.0);
    assert!(summary.cost_per_daly_averted.is_ineffective());
    assert_eq!(summary.cost, 0.0);
    clerk.shutdown();
    rig.stop();
}

#[test]
fn ten_concurrent_evaluations_match_sequential_execution() {
    let policies: Vec<Policy> = (0..10)
        .map(|i| Policy::new(f64::from(i) * 0.1, 1.0 - f64::from(i) * 0.1).unwrap())
        .collect();
    let template = SeedTemplate {
        horizon_days: 120,
        replicates: 2,
        ..SeedTemplate::default()
    };

    let rig = Rig::start(3);
    let dir = tempfile::tempdir().unwrap();

    let concurrent_clerk =
        Clerk::start(clerk_config(&rig, &dir.path().join("a.jsonl"), template.clone())).unwrap();
    let mut concurrent: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = policies
            .iter()
            .map(|&policy| {
                let clerk = &concurrent_clerk;
                scope.spawn(move || (policy, clerk.evaluate_policy(policy).unwrap()))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    concurrent.sort_by_key(|(p, _)| *p);
    concurrent_clerk.shutdown();

    let sequential_clerk =
        Clerk::start(clerk_config(&rig, &dir.path().join("b.jsonl"), template.clone())).unwrap();
    let sequential: Vec<_> = policies
        .iter()
        .map(|&policy| (policy, sequential_clerk.evaluate_policy(policy).unwrap()))
        .collect();
    sequential_clerk.shutdown();
    rig.stop();

    let mut sequential = sequential;
    sequential.sort_by_key(|(p, _)| *p);
    assert_eq!(concurrent, sequential);
}

#[test]
fn distributed_bandit_replays_the_in_process_run_exactly() {
    let template = SeedTemplate {
        horizon_days: 120,
        ..SeedTemplate::default()
    };
    let config = BanditConfig::new(Strategy::Ucb1, 12, 3);
    let surface = oracle_surface(&template, 0.5, config.reward_cap).unwrap();
    let eval_seed = 3 ^ 0x5EED_5EED;

    let mut in_process = StochasticEvaluator::new(&template, eval_seed).unwrap();
    let reference = run_bandit(&config, &mut in_process, &surface).unwrap();

    let rig = Rig::start(2);
    let dir = tempfile::tempdir().unwrap();
    let clerk = Clerk::start(clerk_config(&rig, &dir.path().join("s.jsonl"), template)).unwrap();
    let mut through_fabric = ClerkEvaluator::new(&clerk, eval_seed);
    let distributed = run_bandit(&config, &mut through_fabric, &surface).unwrap();
    clerk.shutdown();
    rig.stop();

    assert!(!distributed.incomplete);
    assert_eq!(distributed.total_regret, reference.total_regret);
    assert_eq!(distributed.best_policy, reference.best_policy);
    assert_eq!(distributed.pulls.len(), reference.pulls.len());
    for (d, r) in distributed.pulls.iter().zip(&reference.pulls) {
        assert_eq!(d.arm_index, r.arm_index);
        assert_eq!(d.reward.to_bits(), r.reward.to_bits(), "t={}", d.t);
        assert_eq!(d.regret.to_bits(), r.regret.to_bits(), "t={}", d.t);
    }
}
