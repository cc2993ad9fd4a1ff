//! Workers: stateless task consumers that turn scenario documents into
//! evaluation results.
//!
//! Each worker holds one task in flight (the broker enforces prefetch=1),
//! simulates it, publishes the result, and only then acks — a crash between
//! simulate and publish triggers redelivery rather than silent loss, at the
//! price of occasional duplicate results the store deduplicates. Tasks that
//! cannot be parsed or fail their hash check are answered with an error
//! result and acked, so a poison pill is quarantined instead of redelivered
//! forever.

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use polisim_core::{model, EvaluationResult, Policy, ScenarioDocument};

use crate::fabric::{BrokerClient, ClientError, RESULTS_CHANNEL, TASKS_CHANNEL};

const POLL: Duration = Duration::from_millis(200);

#[derive(Debug, thiserror::Error)]
pub enum WorkerError {
    #[error("broker unreachable: {0}")]
    Unreachable(#[from] std::io::Error),
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Debug, Clone)]
pub struct WorkerConfig {
    pub broker: String,
    pub worker_id: String,
    /// Retry window for the initial connection and for reconnects after a
    /// broker hiccup; exhausted → the worker gives up with an error.
    pub connect_timeout: Duration,
}

impl WorkerConfig {
    pub fn new(broker: impl Into<String>, worker_id: impl Into<String>) -> WorkerConfig {
        WorkerConfig {
            broker: broker.into(),
            worker_id: worker_id.into(),
            connect_timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct WorkerStats {
    /// Tasks answered (including error results) and acked.
    pub processed: u64,
    /// The subset answered with an error result.
    pub errors: u64,
}

/// `hostname-pid`, the default worker identity.
pub fn default_worker_id() -> String {
    let hostname = std::fs::read_to_string("/proc/sys/kernel/hostname")
        .ok()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "worker".to_string());
    format!("{hostname}-{}", std::process::id())
}

/// Pure task evaluation: parse, verify the content hash, simulate. Never
/// panics on hostile input — malformed tasks become error results carrying
/// whatever identity could be salvaged from the payload.
pub fn process_task(payload: &str, worker_id: &str) -> EvaluationResult {
    let started = Instant::now();
    match serde_json::from_str::<ScenarioDocument>(payload) {
        Ok(doc) => {
            if !doc.id_is_valid() {
                return EvaluationResult::failed(
                    doc.scenario_id.clone(),
                    doc.policy,
                    format!("scenario_id does not match content hash {}", doc.computed_id()),
                    worker_id,
                );
            }
            let sim = model::simulate(&doc);
            let wall_time_ms = started.elapsed().as_millis() as u64;
            EvaluationResult::from_simulation(&doc, &sim, wall_time_ms, worker_id)
        }
        Err(e) => {
            let (scenario_id, policy) = salvage_identity(payload);
            EvaluationResult::failed(scenario_id, policy, format!("unparseable task: {e}"), worker_id)
        }
    }
}

/// Best-effort scenario id and policy from a payload that failed full
/// parsing, so the error result still routes to its waiting caller.
fn salvage_identity(payload: &str) -> (String, Policy) {
    let Ok(value) = serde_json::from_str::<serde_json::Value>(payload) else {
        return (String::new(), Policy::ZERO);
    };
    let scenario_id = value
        .get("scenario_id")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    let policy = value
        .get("policy")
        .and_then(|v| serde_json::from_value(v.clone()).ok())
        .unwrap_or(Policy::ZERO);
    (scenario_id, policy)
}

/// The worker service loop. Returns when `shutdown` is raised (finishing
/// the in-flight task first) or when the broker stays unreachable past the
/// configured window.
pub fn run_worker(config: &WorkerConfig, shutdown: &AtomicBool) -> Result<WorkerStats, WorkerError> {
    let mut client = connect(config)?;
    let mut stats = WorkerStats::default();
    loop {
        if shutdown.load(Ordering::SeqCst) {
            return Ok(stats);
        }
        match client.next_delivery(Some(POLL)) {
            Ok(delivery) => {
                let result = process_task(&delivery.payload, &config.worker_id);
                if result.is_error() {
                    stats.errors += 1;
                }
                // Publish before ack; if the connection dies in between,
                // the task is redelivered and the duplicate result (if the
                // publish did land) is dropped by the store.
                match client
                    .publish(RESULTS_CHANNEL, &result.canonical_json())
                    .and_then(|()| client.ack(delivery.delivery_id))
                {
                    Ok(()) => stats.processed += 1,
                    Err(_) => client = connect(config)?,
                }
            }
            Err(ClientError::TimedOut) => {}
            Err(_) => client = connect(config)?,
        }
    }
}

fn connect(config: &WorkerConfig) -> Result<BrokerClient, WorkerError> {
    let mut client = BrokerClient::connect_with_backoff(&config.broker, config.connect_timeout)?;
    client.subscribe(TASKS_CHANNEL)?;
    Ok(client)
}
