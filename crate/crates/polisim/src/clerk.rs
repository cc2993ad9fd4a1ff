//! The task clerk: germinates scenario documents, deduplicates them against
//! the store, farms misses out over the fabric, and folds results back into
//! aggregated per-policy summaries.
//!
//! One background thread is the sole consumer on the `results` channel; it
//! demultiplexes arrivals by scenario id into a shared mailbox that waiting
//! callers block on. Everything else — publishing, store access, baseline
//! bookkeeping — happens on caller threads behind locks, so any number of
//! `evaluate_policy` calls may run concurrently.

use std::collections::{HashMap, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use polisim_core::econ::{aggregate_summaries, EconSummary};
use polisim_core::{
    EvalError, EvaluationResult, Evaluator, Mode, Policy, ScenarioDocument, ScenarioError,
    SeedTemplate, SplitMix64,
};

use crate::fabric::{BrokerClient, ClientError, RESULTS_CHANNEL, TASKS_CHANNEL};
use crate::store::{Store, StoreError};

const ROUTER_POLL: Duration = Duration::from_millis(200);
const ROUTER_RECONNECT_WINDOW: Duration = Duration::from_secs(15);

#[derive(Debug, thiserror::Error)]
pub enum ClerkError {
    #[error("broker connection failed: {0}")]
    Connect(#[from] std::io::Error),
    #[error(transparent)]
    Client(#[from] ClientError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("no result for scenario {scenario_id} within {timeout_secs} s")]
    TaskTimeout {
        scenario_id: String,
        timeout_secs: u64,
    },
    #[error("worker reported failure for scenario {scenario_id}: {detail}")]
    WorkerFailure { scenario_id: String, detail: String },
    #[error("result listener disconnected from the broker")]
    ListenerClosed,
}

impl ClerkError {
    /// The bandit-facing classification: only a task timeout is a timeout;
    /// everything else is a hard failure.
    pub fn into_eval_error(self) -> EvalError {
        match self {
            ClerkError::TaskTimeout { .. } => EvalError::Timeout {
                detail: self.to_string(),
            },
            other => EvalError::Failed {
                detail: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClerkConfig {
    pub broker: String,
    pub store_path: PathBuf,
    pub template: SeedTemplate,
    /// Patience per task, counted from publish; must exceed the broker's
    /// visibility timeout to let a crashed worker's task be redelivered.
    pub task_timeout: Duration,
    /// How long to keep retrying the initial broker connection.
    pub connect_timeout: Duration,
}

impl ClerkConfig {
    pub fn new(broker: impl Into<String>, store_path: impl Into<PathBuf>) -> ClerkConfig {
        ClerkConfig {
            broker: broker.into(),
            store_path: store_path.into(),
            template: SeedTemplate::default(),
            task_timeout: Duration::from_secs(120),
            connect_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Default)]
struct Mailbox {
    results: HashMap<String, EvaluationResult>,
    closed: bool,
}

/// Totals for one grid sweep.
#[derive(Debug, Clone, Copy)]
pub struct SweepReport {
    pub policies: usize,
    /// Policies actually evaluated; smaller than `policies` only when the
    /// sweep was interrupted.
    pub evaluated: usize,
    pub published: u64,
    pub cache_hits: u64,
    pub interrupted: bool,
    pub elapsed: Duration,
}

pub struct Clerk {
    template: SeedTemplate,
    task_timeout: Duration,
    store: Mutex<Store>,
    publisher: Mutex<BrokerClient>,
    mailbox: Arc<(Mutex<Mailbox>, Condvar)>,
    baseline: Mutex<Option<Vec<f64>>>,
    published: AtomicU64,
    cache_hits: AtomicU64,
    stop: Arc<AtomicBool>,
    router: Option<thread::JoinHandle<()>>,
}

impl Clerk {
    /// Connects both broker legs, opens the store for writing, and spawns
    /// the result listener. Fails fast if the broker stays unreachable for
    /// `connect_timeout` or another process holds the store lock.
    pub fn start(config: ClerkConfig) -> Result<Clerk, ClerkError> {
        config.template.validate()?;
        let store = Store::open(&config.store_path)?;
        let publisher = BrokerClient::connect_with_backoff(&config.broker, config.connect_timeout)?;
        let mut listener =
            BrokerClient::connect_with_backoff(&config.broker, config.connect_timeout)?;
        listener.subscribe(RESULTS_CHANNEL)?;

        let mailbox: Arc<(Mutex<Mailbox>, Condvar)> = Arc::default();
        let stop = Arc::new(AtomicBool::new(false));
        let router = {
            let mailbox = Arc::clone(&mailbox);
            let stop = Arc::clone(&stop);
            let broker = config.broker.clone();
            thread::Builder::new()
                .name("clerk-results".into())
                .spawn(move || router_loop(listener, broker, mailbox, stop))
                .expect("spawn result listener")
        };

        Ok(Clerk {
            template: config.template,
            task_timeout: config.task_timeout,
            store: Mutex::new(store),
            publisher: Mutex::new(publisher),
            mailbox,
            baseline: Mutex::new(None),
            published: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            stop,
            router: Some(router),
        })
    }

    pub fn template(&self) -> &SeedTemplate {
        &self.template
    }

    /// Tasks actually published to the fabric so far (cache misses).
    pub fn published_count(&self) -> u64 {
        self.published.load(Ordering::Relaxed)
    }

    /// Evaluations answered straight from the store.
    pub fn cache_hit_count(&self) -> u64 {
        self.cache_hits.load(Ordering::Relaxed)
    }

    pub fn store_counts(&self) -> (usize, usize) {
        let store = self.store.lock().unwrap();
        (store.scenario_count(), store.result_count())
    }

    pub fn non_error_result_count(&self) -> usize {
        self.store.lock().unwrap().non_error_result_count()
    }

    pub fn query_surface(&self) -> Vec<crate::store::SurfaceRow> {
        self.store.lock().unwrap().query_surface()
    }

    /// Aggregated summary for one policy: all replicates either answered
    /// from the store or run by workers, completed against the zero-policy
    /// baseline, stored, and averaged (ineffective replicates tallied but
    /// excluded from the mean).
    pub fn evaluate_policy(&self, policy: Policy) -> Result<EconSummary, ClerkError> {
        let baseline = self.ensure_baseline()?;
        let replicates = self.template.effective_replicates();
        let docs: Vec<ScenarioDocument> = (0..replicates)
            .map(|i| self.template.germinate(policy, i))
            .collect::<Result<_, _>>()?;
        let results = self.run_documents(&docs)?;

        let mut summaries = Vec::with_capacity(results.len());
        let mut store = self.store.lock().unwrap();
        for (i, mut result) in results.into_iter().enumerate() {
            if let Some(detail) = result.error.clone() {
                store.put_result(&result)?;
                return Err(ClerkError::WorkerFailure {
                    scenario_id: result.scenario_id,
                    detail,
                });
            }
            result.complete_against_baseline(baseline[i], &self.template.epi);
            store.put_result(&result)?;
            summaries.push(result.econ_summary().expect("completed above"));
        }
        Ok(aggregate_summaries(&summaries))
    }

    /// One paired stochastic pull for the bandit: policy and zero-policy
    /// baseline under the same fresh seed (common random numbers), exactly
    /// like the in-process stochastic evaluator, but run by workers.
    pub fn evaluate_paired(&self, policy: Policy, seed: u64) -> Result<EconSummary, ClerkError> {
        let template = SeedTemplate {
            mode: Mode::Stochastic,
            base_seed: seed,
            replicates: 1,
            ..self.template.clone()
        };
        let docs = [
            template.germinate(policy, 0)?,
            template.germinate(Policy::ZERO, 0)?,
        ];
        let results = self.run_documents(&docs)?;
        let [mut policy_result, mut baseline_result]: [EvaluationResult; 2] =
            results.try_into().expect("one result per document");

        let mut store = self.store.lock().unwrap();
        for result in [&policy_result, &baseline_result] {
            if let Some(detail) = &result.error {
                store.put_result(result)?;
                return Err(ClerkError::WorkerFailure {
                    scenario_id: result.scenario_id.clone(),
                    detail: detail.clone(),
                });
            }
        }
        let baseline_cases = baseline_result.total_cases;
        baseline_result.complete_against_baseline(baseline_cases, &template.epi);
        policy_result.complete_against_baseline(baseline_cases, &template.epi);
        store.put_result(&baseline_result)?;
        store.put_result(&policy_result)?;
        Ok(policy_result.econ_summary().expect("completed above"))
    }

    /// Evaluates every policy on the grid across `threads` caller threads.
    /// Already-stored results are reused, so a completed sweep re-runs
    /// without publishing a single task. Raising `stop` drains the queue
    /// and returns early with `interrupted` set.
    pub fn sweep(
        &self,
        grid_step: f64,
        threads: usize,
        stop: &AtomicBool,
    ) -> Result<SweepReport, ClerkError> {
        let started = Instant::now();
        let published_before = self.published_count();
        let hits_before = self.cache_hit_count();
        let grid = Policy::grid(grid_step).map_err(ScenarioError::from)?;
        let policies = grid.len();
        self.ensure_baseline()?;

        let queue = Mutex::new(VecDeque::from(grid));
        let evaluated = AtomicU64::new(0);
        let first_error: Mutex<Option<ClerkError>> = Mutex::new(None);
        thread::scope(|scope| {
            for _ in 0..threads.max(1) {
                scope.spawn(|| loop {
                    if stop.load(Ordering::SeqCst) {
                        queue.lock().unwrap().clear();
                        return;
                    }
                    let Some(policy) = queue.lock().unwrap().pop_front() else {
                        return;
                    };
                    match self.evaluate_policy(policy) {
                        Ok(_) => {
                            evaluated.fetch_add(1, Ordering::Relaxed);
                        }
                        Err(e) => {
                            let mut slot = first_error.lock().unwrap();
                            if slot.is_none() {
                                *slot = Some(e);
                            }
                            queue.lock().unwrap().clear();
                            return;
                        }
                    }
                });
            }
        });
        if let Some(e) = first_error.into_inner().unwrap() {
            return Err(e);
        }
        Ok(SweepReport {
            policies,
            evaluated: evaluated.into_inner() as usize,
            published: self.published_count() - published_before,
            cache_hits: self.cache_hit_count() - hits_before,
            interrupted: stop.load(Ordering::SeqCst),
            elapsed: started.elapsed(),
        })
    }

    /// Baseline cases per replicate, computed once per clerk lifetime. The
    /// lock is held across the computation so concurrent callers wait for
    /// the first instead of dispatching duplicates; a failure leaves the
    /// slot empty for a later retry.
    fn ensure_baseline(&self) -> Result<Vec<f64>, ClerkError> {
        let mut slot = self.baseline.lock().unwrap();
        if let Some(cases) = slot.as_ref() {
            return Ok(cases.clone());
        }
        let replicates = self.template.effective_replicates();
        let docs: Vec<ScenarioDocument> = (0..replicates)
            .map(|i| self.template.germinate(Policy::ZERO, i))
            .collect::<Result<_, _>>()?;
        let results = self.run_documents(&docs)?;

        let mut cases = Vec::with_capacity(results.len());
        let mut store = self.store.lock().unwrap();
        for mut result in results {
            if let Some(detail) = result.error.clone() {
                store.put_result(&result)?;
                return Err(ClerkError::WorkerFailure {
                    scenario_id: result.scenario_id,
                    detail,
                });
            }
            let own_cases = result.total_cases;
            result.complete_against_baseline(own_cases, &self.template.epi);
            store.put_result(&result)?;
            cases.push(own_cases);
        }
        *slot = Some(cases.clone());
        Ok(cases)
    }

    /// Resolves each document to a raw (uncompleted) result: from the store
    /// when a non-error result exists, otherwise by publishing the task and
    /// awaiting its result. Duplicate ids within one call (the zero policy
    /// paired against itself, say) are resolved once and fanned out.
    /// Returned in document order.
    fn run_documents(
        &self,
        docs: &[ScenarioDocument],
    ) -> Result<Vec<EvaluationResult>, ClerkError> {
        let mut resolved: HashMap<String, EvaluationResult> = HashMap::new();
        let mut misses: Vec<&ScenarioDocument> = Vec::new();
        let mut hits = 0u64;
        {
            let mut store = self.store.lock().unwrap();
            for doc in docs {
                if resolved.contains_key(&doc.scenario_id) {
                    hits += 1;
                    continue;
                }
                if misses.iter().any(|m| m.scenario_id == doc.scenario_id) {
                    continue;
                }
                match store.get_result(&doc.scenario_id) {
                    Some(result) if !result.is_error() => {
                        resolved.insert(doc.scenario_id.clone(), result.clone());
                        hits += 1;
                    }
                    _ => {
                        store.put_scenario(doc)?;
                        misses.push(doc);
                    }
                }
            }
        }
        self.cache_hits.fetch_add(hits, Ordering::Relaxed);

        if !misses.is_empty() {
            {
                let mut publisher = self.publisher.lock().unwrap();
                for doc in &misses {
                    publisher.publish(TASKS_CHANNEL, &doc.canonical_json())?;
                }
            }
            self.published
                .fetch_add(misses.len() as u64, Ordering::Relaxed);

            let deadline = Instant::now() + self.task_timeout;
            for doc in &misses {
                let result = self.wait_result(&doc.scenario_id, deadline)?;
                resolved.insert(doc.scenario_id.clone(), result);
            }
        }
        Ok(docs
            .iter()
            .map(|doc| resolved[&doc.scenario_id].clone())
            .collect())
    }

    fn wait_result(
        &self,
        scenario_id: &str,
        deadline: Instant,
    ) -> Result<EvaluationResult, ClerkError> {
        let (lock, condvar) = &*self.mailbox;
        let mut mailbox = lock.lock().unwrap();
        loop {
            if let Some(result) = mailbox.results.remove(scenario_id) {
                return Ok(result);
            }
            if mailbox.closed {
                return Err(ClerkError::ListenerClosed);
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(ClerkError::TaskTimeout {
                    scenario_id: scenario_id.to_string(),
                    timeout_secs: self.task_timeout.as_secs(),
                });
            }
            let (guard, _) = condvar.wait_timeout(mailbox, deadline - now).unwrap();
            mailbox = guard;
        }
    }

    /// Stops the result listener and joins it.
    pub fn shutdown(mut self) {
        self.stop_router();
    }

    fn stop_router(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(handle) = self.router.take() {
            let _ = handle.join();
        }
    }
}

impl Drop for Clerk {
    fn drop(&mut self) {
        self.stop_router();
    }
}

fn router_loop(
    mut client: BrokerClient,
    broker: String,
    mailbox: Arc<(Mutex<Mailbox>, Condvar)>,
    stop: Arc<AtomicBool>,
) {
    let (lock, condvar) = &*mailbox;
    while !stop.load(Ordering::SeqCst) {
        match client.next_delivery(Some(ROUTER_POLL)) {
            Ok(delivery) => {
                match serde_json::from_str::<EvaluationResult>(&delivery.payload) {
                    Ok(result) => {
                        let mut mailbox = lock.lock().unwrap();
                        // First arrival wins, matching the store's dedup rule.
                        mailbox
                            .results
                            .entry(result.scenario_id.clone())
                            .or_insert(result);
                        condvar.notify_all();
                    }
                    Err(e) => {
                        eprintln!("clerk: discarding unparseable result: {e}");
                    }
                }
                // Ack after the mailbox insert so a clerk crash requeues
                // instead of losing the result. A failed ack means the
                // connection is gone; reconnect below.
                if client.ack(delivery.delivery_id).is_err() {
                    match reconnect(&broker) {
                        Ok(fresh) => client = fresh,
                        Err(_) => break,
                    }
                }
            }
            Err(ClientError::TimedOut) => {}
            Err(_) => match reconnect(&broker) {
                Ok(fresh) => client = fresh,
                Err(_) => break,
            },
        }
    }
    let mut mailbox = lock.lock().unwrap();
    mailbox.closed = true;
    condvar.notify_all();
}

fn reconnect(broker: &str) -> Result<BrokerClient, ClientError> {
    let mut client = BrokerClient::connect_with_backoff(broker, ROUTER_RECONNECT_WINDOW)?;
    client.subscribe(RESULTS_CHANNEL)?;
    Ok(client)
}

/// [`Evaluator`] adapter for bandits running against a live clerk: each
/// pull draws a fresh seed from its own stream and runs a paired
/// policy/baseline replicate through the fabric.
pub struct ClerkEvaluator<'a> {
    clerk: &'a Clerk,
    seeds: SplitMix64,
}

impl<'a> ClerkEvaluator<'a> {
    /// `seed_stream` should stay distinct from the bandit's selection seed
    /// so exploration noise and simulation noise are independent.
    pub fn new(clerk: &'a Clerk, seed_stream: u64) -> Self {
        ClerkEvaluator {
            clerk,
            seeds: SplitMix64::new(seed_stream),
        }
    }
}

impl Evaluator for ClerkEvaluator<'_> {
    fn evaluate(&mut self, policy: &Policy) -> Result<EconSummary, EvalError> {
        let seed = self.seeds.next_u64();
        self.clerk
            .evaluate_paired(*policy, seed)
            .map_err(ClerkError::into_eval_error)
    }
}
