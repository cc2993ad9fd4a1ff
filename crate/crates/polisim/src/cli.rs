//! The `polisim` binary: one subcommand per service plus the in-process
//! oracle, agent, and report tools.
//!
//! Conventions across all subcommands: diagnostics go to standard error,
//! data goes to standard output or `--out`; every flag can also be set via
//! a `POLISIM_<FLAG>` environment variable; exit code 0 means success,
//! 130 means a clean interrupt, anything else is a failure.

use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use polisim_core::bandit::{run_bandit, BanditConfig, BanditReport, Strategy};
use polisim_core::evaluate::oracle_surface;
use polisim_core::{
    model, EvaluationResult, ExpectationEvaluator, Mode, Policy, SeedTemplate, StochasticEvaluator,
};

use crate::clerk::{Clerk, ClerkConfig, ClerkEvaluator};
use crate::fabric::{serve, BrokerConfig};
use crate::store::Store;
use crate::worker::{default_worker_id, run_worker, WorkerConfig};

/// XORed into `--seed` to derive the evaluator's replicate-seed stream, so
/// simulation noise stays decorrelated from the selection stream.
const EVAL_SEED_SALT: u64 = 0x5EED_5EED;

/// Caps the cost per DALY averted entering bandit rewards; matches
/// [`BanditConfig::new`].
const REWARD_CAP: f64 = 10_000.0;

static SHUTDOWN: AtomicBool = AtomicBool::new(false);

#[derive(Parser)]
#[command(
    name = "polisim",
    version,
    about = "Desk-scale malaria policy evaluation: message broker, simulation workers, scenario clerk, bandit agents"
)]
struct Cli {
    #[command(subcommand)]
    command: CommandKind,
}

#[derive(Subcommand)]
enum CommandKind {
    /// Run the in-memory message broker.
    Broker(BrokerArgs),
    /// Run one simulation worker.
    Worker(WorkerArgs),
    /// Evaluate the whole policy grid through workers, storing everything.
    ClerkServe(ClerkServeArgs),
    /// Search for the best policy with a multi-armed bandit.
    Agent(AgentArgs),
    /// Compute the expectation-mode surface in-process and store it.
    Oracle(OracleArgs),
    /// Export the stored results surface as CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct BrokerArgs {
    /// Address to listen on.
    #[arg(long, default_value = "127.0.0.1:5680", env = "POLISIM_LISTEN")]
    listen: String,
    /// Seconds an unacked delivery stays with a consumer before requeue.
    #[arg(long, default_value_t = 60, env = "POLISIM_VISIBILITY_TIMEOUT_SECS")]
    visibility_timeout_secs: u64,
    /// Append broker events to this file as JSON lines.
    #[arg(long, env = "POLISIM_EVENT_LOG")]
    event_log: Option<PathBuf>,
}

#[derive(Args)]
struct WorkerArgs {
    /// Broker address.
    #[arg(long, default_value = "127.0.0.1:5680", env = "POLISIM_BROKER")]
    broker: String,
    /// Identity stamped into results; defaults to hostname-pid.
    #[arg(long, env = "POLISIM_WORKER_ID")]
    worker_id: Option<String>,
    /// Give up with a nonzero exit after this long without a broker.
    #[arg(long, default_value_t = 60, env = "POLISIM_CONNECT_TIMEOUT_SECS")]
    connect_timeout_secs: u64,
}

/// Flags shared by every subcommand that drives a clerk.
#[derive(Args)]
struct ClerkFlags {
    /// Broker address.
    #[arg(long, default_value = "127.0.0.1:5680", env = "POLISIM_BROKER")]
    broker: String,
    /// Datastore path (JSON lines).
    #[arg(long, env = "POLISIM_STORE")]
    store: PathBuf,
    /// Scenario template JSON file; omitted fields take defaults.
    #[arg(long, env = "POLISIM_TEMPLATE")]
    template: Option<PathBuf>,
    /// Override the template's replicate count.
    #[arg(long, env = "POLISIM_REPLICATES")]
    replicates: Option<u32>,
    /// Patience per published task before the evaluation times out.
    #[arg(long, default_value_t = 120, env = "POLISIM_TASK_TIMEOUT_SECS")]
    task_timeout_secs: u64,
}

impl ClerkFlags {
    fn load_template(&self) -> anyhow::Result<SeedTemplate> {
        load_template(self.template.as_deref(), self.replicates)
    }

    fn clerk_config(&self) -> anyhow::Result<ClerkConfig> {
        let mut config = ClerkConfig::new(self.broker.clone(), self.store.clone());
        config.template = self.load_template()?;
        config.task_timeout = Duration::from_secs(self.task_timeout_secs);
        Ok(config)
    }
}

#[derive(Args)]
struct ClerkServeArgs {
    #[command(flatten)]
    clerk: ClerkFlags,
    /// Coverage increment of the policy grid (0.1 → 11×11 policies).
    #[arg(long, default_value_t = 0.1, env = "POLISIM_GRID_STEP")]
    grid_step: f64,
    /// Concurrent policy evaluations.
    #[arg(long, default_value_t = 8, env = "POLISIM_THREADS")]
    threads: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum StrategyArg {
    /// ε-greedy with decaying exploration.
    #[value(name = "eps", alias = "epsilon-greedy")]
    Eps,
    /// Upper confidence bound.
    #[value(name = "ucb", alias = "ucb1")]
    Ucb,
    /// Thompson sampling.
    #[value(name = "ts", alias = "thompson")]
    Ts,
}

impl From<StrategyArg> for Strategy {
    fn from(value: StrategyArg) -> Strategy {
        match value {
            StrategyArg::Eps => Strategy::EpsilonGreedy,
            StrategyArg::Ucb => Strategy::Ucb1,
            StrategyArg::Ts => Strategy::Thompson,
        }
    }
}

#[derive(Args)]
struct AgentArgs {
    #[command(flatten)]
    clerk: ClerkFlags,
    /// Bandit strategy.
    #[arg(long, value_enum, env = "POLISIM_STRATEGY")]
    strategy: StrategyArg,
    /// Total pulls.
    #[arg(long, env = "POLISIM_BUDGET")]
    budget: u32,
    /// Coverage increment of the arm grid.
    #[arg(long, default_value_t = 0.1, env = "POLISIM_GRID_STEP")]
    grid_step: f64,
    /// Selection seed; the evaluator stream is derived from it.
    #[arg(long, default_value_t = 0, env = "POLISIM_SEED")]
    seed: u64,
    /// Evaluate pulls in this process instead of through broker + workers.
    #[arg(long, env = "POLISIM_IN_PROCESS")]
    in_process: bool,
    /// Write the pull log as CSV to this file.
    #[arg(long, env = "POLISIM_PULL_LOG")]
    pull_log: Option<PathBuf>,
    /// Write the report JSON here instead of standard output.
    #[arg(long, env = "POLISIM_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleArgs {
    /// Datastore path (JSON lines).
    #[arg(long, env = "POLISIM_STORE")]
    store: PathBuf,
    /// Scenario template JSON file; mode is forced to expectation.
    #[arg(long, env = "POLISIM_TEMPLATE")]
    template: Option<PathBuf>,
    /// Coverage increment of the policy grid.
    #[arg(long, default_value_t = 0.1, env = "POLISIM_GRID_STEP")]
    grid_step: f64,
    /// Write the surface JSON here instead of standard output.
    #[arg(long, env = "POLISIM_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Datastore path (JSON lines).
    #[arg(long, env = "POLISIM_STORE")]
    store: PathBuf,
    /// Write the CSV here instead of standard output.
    #[arg(long, env = "POLISIM_OUT")]
    out: Option<PathBuf>,
}

/// Entry point behind `main`; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    install_signal_handlers();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("polisim: {e:#}");
            1
        }
    }
}

fn dispatch(command: CommandKind) -> anyhow::Result<i32> {
    match command {
        CommandKind::Broker(args) => cmd_broker(args),
        CommandKind::Worker(args) => cmd_worker(args),
        CommandKind::ClerkServe(args) => cmd_clerk_serve(args),
        CommandKind::Agent(args) => cmd_agent(args),
        CommandKind::Oracle(args) => cmd_oracle(args),
        CommandKind::Report(args) => cmd_report(args),
    }
}

fn cmd_broker(args: BrokerArgs) -> anyhow::Result<i32> {
    let listen = resolve_addr(&args.listen)?;
    let mut config = BrokerConfig::new(listen);
    config.visibility_timeout = Duration::from_secs(args.visibility_timeout_secs);
    config.event_log = args.event_log;
    let handle = serve(config).with_context(|| format!("binding {listen}"))?;
    println!("broker listening on {}", handle.addr());
    flush_stdout();

    while !SHUTDOWN.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(100));
    }
    eprintln!("broker: shutting down");
    handle.shutdown();
    Ok(130)
}

fn cmd_worker(args: WorkerArgs) -> anyhow::Result<i32> {
    let worker_id = args.worker_id.unwrap_or_else(default_worker_id);
    let mut config = WorkerConfig::new(args.broker.clone(), worker_id.clone());
    config.connect_timeout = Duration::from_secs(args.connect_timeout_secs);
    eprintln!("worker {worker_id}: consuming tasks from {}", args.broker);
    let stats = run_worker(&config, &SHUTDOWN)?;
    eprintln!(
        "worker {worker_id}: processed {} tasks ({} errors)",
        stats.processed, stats.errors
    );
    Ok(if SHUTDOWN.load(Ordering::SeqCst) { 130 } else { 0 })
}

fn cmd_clerk_serve(args: ClerkServeArgs) -> anyhow::Result<i32> {
    let clerk = Clerk::start(args.clerk.clerk_config()?)?;
    eprintln!(
        "clerk: sweeping the grid at step {} across {} threads",
        args.grid_step, args.threads
    );
    let report = clerk.sweep(args.grid_step, args.threads, &SHUTDOWN)?;
    let (_, results) = clerk.store_counts();
    println!(
        "swept {}/{} policies: {} tasks published, {} cache hits, {} results in store, {:.1}s",
        report.evaluated,
        report.policies,
        report.published,
        report.cache_hits,
        results,
        report.elapsed.as_secs_f64()
    );
    flush_stdout();
    clerk.shutdown();
    if report.interrupted {
        eprintln!("clerk: interrupted before the sweep finished");
        return Ok(130);
    }
    Ok(0)
}

fn cmd_agent(args: AgentArgs) -> anyhow::Result<i32> {
    let template = args.clerk.load_template()?;
    let config = BanditConfig::new(args.strategy.into(), args.budget, args.seed);
    let surface = oracle_surface(&template, args.grid_step, config.reward_cap)?;
    let eval_seed = args.seed ^ EVAL_SEED_SALT;

    let report = if args.in_process {
        match template.mode {
            Mode::Expectation => {
                let mut evaluator = ExpectationEvaluator::new(&template)?;
                run_bandit(&config, &mut evaluator, &surface)?
            }
            Mode::Stochastic => {
                let mut evaluator = StochasticEvaluator::new(&template, eval_seed)?;
                run_bandit(&config, &mut evaluator, &surface)?
            }
        }
    } else {
        let clerk = Clerk::start(args.clerk.clerk_config()?)?;
        let mut evaluator = ClerkEvaluator::new(&clerk, eval_seed);
        let report = run_bandit(&config, &mut evaluator, &surface)?;
        clerk.shutdown();
        report
    };

    let mut json = serde_json::to_string_pretty(&report).context("serializing report")?;
    json.push('\n');
    write_output(args.out.as_deref(), &json)?;
    if let Some(path) = &args.pull_log {
        std::fs::write(path, pull_log_csv(&report))
            .with_context(|| format!("writing pull log {}", path.display()))?;
    }

    if report.incomplete {
        let reason = report.abort_reason.as_deref().unwrap_or("unknown");
        eprintln!(
            "agent: incomplete after {}/{} pulls: {reason}",
            report.pulls.len(),
            report.budget
        );
        return Ok(1);
    }
    eprintln!(
        "agent: {} finished {} pulls, total regret {:.3}, best policy {}",
        report.strategy,
        report.pulls.len(),
        report.total_regret,
        report
            .best_policy
            .map(|p| format!("itn={} irs={}", p.itn_coverage, p.irs_coverage))
            .unwrap_or_else(|| "none".to_string()),
    );
    Ok(0)
}

fn cmd_oracle(args: OracleArgs) -> anyhow::Result<i32> {
    let mut template = load_template(args.template.as_deref(), None)?;
    template.mode = Mode::Expectation;
    template.replicates = 1;
    let surface = oracle_surface(&template, args.grid_step, REWARD_CAP)?;

    let mut store = Store::open(&args.store)?;
    let baseline_cases = model::simulate(&template.germinate(Policy::ZERO, 0)?).total_cases;
    for entry in &surface.entries {
        let doc = template.germinate(entry.policy, 0)?;
        let started = Instant::now();
        let sim = model::simulate(&doc);
        let wall_time_ms = started.elapsed().as_millis() as u64;
        let mut result = EvaluationResult::from_simulation(&doc, &sim, wall_time_ms, "oracle");
        result.complete_against_baseline(baseline_cases, &template.epi);
        store.put_scenario(&doc)?;
        store.put_result(&result)?;
    }

    let best = surface.best();
    eprintln!(
        "oracle: {} policies stored; argmax itn={} irs={} at expected reward {:.3}",
        surface.entries.len(),
        best.policy.itn_coverage,
        best.policy.irs_coverage,
        best.expected_reward
    );
    let mut json = serde_json::to_string_pretty(&surface).context("serializing surface")?;
    json.push('\n');
    write_output(args.out.as_deref(), &json)?;
    Ok(0)
}

fn cmd_report(args: ReportArgs) -> anyhow::Result<i32> {
    let store = Store::open_read_only(&args.store)?;
    write_output(args.out.as_deref(), &surface_csv(&store))?;
    Ok(0)
}

/// CSV of the aggregated surface, one row per policy; `None` aggregates
/// (all replicates ineffective) render as empty cells.
fn surface_csv(store: &Store) -> String {
    let mut csv = String::from("itn,irs,mean_cost_per_daly,stddev,n,ineffective_n\n");
    for row in store.query_surface() {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.policy.itn_coverage,
            row.policy.irs_coverage,
            opt_cell(row.mean_cost_per_daly),
            opt_cell(row.stddev),
            row.n,
            row.ineffective_n
        ));
    }
    csv
}

fn pull_log_csv(report: &BanditReport) -> String {
    let mut csv = String::from("t,arm_index,itn,irs,reward,regret\n");
    for pull in &report.pulls {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            pull.t,
            pull.arm_index,
            pull.policy.itn_coverage,
            pull.policy.irs_coverage,
            pull.reward,
            pull.regret
        ));
    }
    csv
}

fn opt_cell(value: Option<f64>) -> String {
    value.map(|v| format!("{v}")).unwrap_or_default()
}

fn load_template(path: Option<&Path>, replicates: Option<u32>) -> anyhow::Result<SeedTemplate> {
    let mut template = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading template {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing template {}", p.display()))?
        }
        None => SeedTemplate::default(),
    };
    if let Some(r) = replicates {
        template.replicates = r;
    }
    template.validate()?;
    Ok(template)
}

fn resolve_addr(addr: &str) -> anyhow::Result<SocketAddr> {
    addr.to_socket_addrs()
        .with_context(|| format!("resolving {addr}"))?
        .next()
        .with_context(|| format!("no addresses for {addr}"))
}

fn write_output(path: Option<&Path>, data: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, data).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{data}");
            flush_stdout();
            Ok(())
        }
    }
}

fn flush_stdout() {
    use std::io::Write;
    let _ = std::io::stdout().flush();
}

fn install_signal_handlers() {
    extern "C" fn on_signal(_signal: libc::c_int) {
        SHUTDOWN.store(true, Ordering::SeqCst);
    }
    let handler: extern "C" fn(libc::c_int) = on_signal;
    unsafe {
        libc::signal(libc::SIGINT, handler as usize);
        libc::signal(libc::SIGTERM, handler as usize);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn broker_defaults_match_the_documented_port() {
        let cli = Cli::try_parse_from(["polisim", "broker"]).unwrap();
        let CommandKind::Broker(args) = cli.command else {
            panic!("expected broker");
        };
        assert_eq!(args.listen, "127.0.0.1:5680");
        assert_eq!(args.visibility_timeout_secs, 60);
        assert!(args.event_log.is_none());
    }

    #[test]
    fn strategy_short_names_and_aliases_parse() {
        for (name, expected) in [
            ("eps", Strategy::EpsilonGreedy),
            ("epsilon-greedy", Strategy::EpsilonGreedy),
            ("ucb", Strategy::Ucb1),
            ("ucb1", Strategy::Ucb1),
            ("ts", Strategy::Thompson),
            ("thompson", Strategy::Thompson),
        ] {
            let cli = Cli::try_parse_from([
                "polisim", "agent", "--store", "s.jsonl", "--strategy", name, "--budget", "10",
            ])
            .unwrap();
            let CommandKind::Agent(args) = cli.command else {
                panic!("expected agent");
            };
            assert_eq!(Strategy::from(args.strategy), expected, "{name}");
        }
    }

    #[test]
    fn clerk_serve_requires_a_store() {
        let err = Cli::try_parse_from(["polisim", "clerk-serve"])
            .err()
            .expect("missing --store must fail parsing");
        assert!(err.to_string().contains("--store"));
    }

    #[test]
    fn surface_csv_renders_missing_aggregates_as_empty_cells() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.jsonl");
        {
            let mut store = Store::open(&path).unwrap();
            let mut result = EvaluationResult::failed(
                "x".into(),
                Policy::new(0.1, 0.2).unwrap(),
                "oops".into(),
                "w",
            );
            result.error = None;
            result.dalys_averted = Some(-1.0);
            result.cost_per_daly_averted = Some(polisim_core::CostPerDaly::Ineffective);
            store.put_result(&result).unwrap();
        }
        let store = Store::open_read_only(&path).unwrap();
        assert_eq!(
            surface_csv(&store),
            "itn,irs,mean_cost_per_daly,stddev,n,ineffective_n\n0.100,0.200,,,0,1\n"
        );
    }

    #[test]
    fn empty_store_exports_just_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open_read_only(dir.path().join("absent.jsonl")).unwrap();
        assert_eq!(surface_csv(&store), "itn,irs,mean_cost_per_daly,stddev,n,ineffective_n\n");
    }
}
