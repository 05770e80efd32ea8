//! Executes one seeded run end to end: build the environment, drive the
//! engine slot by slot, stream metrics and trace rows, and persist a JSON
//! summary whose every scalar is recomputable from the trace alone.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lago_core::engine::Simulation;
use lago_core::environment::Environment;
use lago_core::metrics::{self, BoundConstants, NodeEnergyStat, RegretAccumulator};

use crate::config::RunConfig;
use crate::trace::{TraceMeta, TraceWriter};

/// Curve sample recorded after every `checkpoint_every` slots (and after the
/// final slot): running averages over all slots executed so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Number of slots folded into the averages.
    pub slots: u64,
    pub regret_expected: f64,
    pub regret_realized: f64,
    pub avg_total_backlog: f64,
    pub avg_task_latency: f64,
    pub avg_total_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSummary {
    pub b: f64,
    pub theta1: f64,
    pub theta2: f64,
    /// Regret bound evaluated at this run's horizon and V.
    pub regret_bound: f64,
}

/// Everything a run leaves behind, also written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub seed: u64,
    pub horizon: u64,
    pub v: f64,
    pub strategy: String,
    pub total_tasks: u64,
    /// Realized average latency per task, seconds.
    pub avg_task_latency: f64,
    /// Expected-form average latency per task (true means on chosen nodes).
    pub avg_task_latency_expected: f64,
    /// Time-averaged summed per-node energy, J per slot.
    pub avg_total_energy: f64,
    pub node_energy: Vec<NodeEnergyStat>,
    pub max_energy_ratio: f64,
    pub energy_violations: usize,
    /// Final R(T), expected form (primary series).
    pub regret_expected: f64,
    /// Final R(T) from realized latencies (secondary series).
    pub regret_realized: f64,
    /// Time-averaged clairvoyant baseline D*, seconds per slot.
    pub avg_dstar: f64,
    /// Final time-averaged total backlog, joules.
    pub avg_total_backlog: f64,
    pub bounds: BoundsSummary,
    /// SHA-256 of trace.csv.
    pub trace_hash: String,
    pub curve: Vec<CurvePoint>,
    pub out_dir: PathBuf,
}

pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] lago_core::model::InvalidConfig),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Engine(#[from] lago_core::engine::EngineError),
    #[error("environment: {0}")]
    Env(#[from] lago_core::environment::EnvError),
}

fn io_err(path: &Path) -> impl Fn(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

/// Runs the configured simulation, writing `config.toml`, `trace.csv`,
/// `detail.csv`, and `summary.json` into `<out>/<run_name>/`.
pub fn run_once(config: &RunConfig) -> Result<RunSummary, RunError> {
    let validated = config.validate()?;
    let dir = config.out.join(config.run_name());
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    fs::write(dir.join(CONFIG_FILE), config.to_toml()).map_err(io_err(&dir.join(CONFIG_FILE)))?;

    let env = Environment::build_sampled(
        &validated.meta,
        validated.constants.clone(),
        validated.params.clone(),
        validated.seed,
    )?;
    let budgets = env.budgets();
    let means = env.true_means().clone();
    let bound = metrics::bound_constants(&validated.constants, &budgets);
    let mut sim = Simulation::new(env, validated.strategy, validated.v, validated.seed)?;

    let meta = TraceMeta {
        n_nodes: validated.constants.n_nodes(),
        budgets: budgets.clone(),
        v: validated.v,
        seed: validated.seed,
        strategy: validated.strategy.token().to_string(),
        horizon: validated.horizon,
        checkpoint_every: validated.checkpoint_every,
    };
    let mut writer = TraceWriter::create(&dir, &meta).map_err(io_err(&dir))?;

    let mut regret = RegretAccumulator::new();
    let mut total_tasks = 0u64;
    let mut latency_sum = 0.0;
    let mut expected_latency_sum = 0.0;
    let mut backlog_sum = 0.0;
    let mut curve = Vec::new();

    for i in 0..validated.horizon {
        let mut tr = sim.step()?;
        regret.observe(&mut tr, &means);
        total_tasks += tr.tasks.len() as u64;
        latency_sum += tr.latency;
        expected_latency_sum += tr.expected_latency;
        backlog_sum += tr.total_backlog();
        writer
            .write_slot(&tr, regret.avg_expected(), regret.avg_realized())
            .map_err(io_err(&dir))?;

        let done = i + 1;
        if done % validated.checkpoint_every == 0 || done == validated.horizon {
            let energy_avg: f64 =
                sim.ledger().cumulative.iter().sum::<f64>() / done as f64;
            curve.push(CurvePoint {
                slots: done,
                regret_expected: regret.avg_expected(),
                regret_realized: regret.avg_realized(),
                avg_total_backlog: backlog_sum / done as f64,
                avg_task_latency: latency_sum / total_tasks.max(1) as f64,
                avg_total_energy: energy_avg,
            });
        }
    }
    let trace_hash = writer.finish().map_err(io_err(&dir))?;

    let t = validated.horizon as f64;
    let node_energy: Vec<NodeEnergyStat> = sim
        .ledger()
        .time_averages()
        .iter()
        .enumerate()
        .map(|(node, &avg)| NodeEnergyStat {
            node,
            avg_energy: avg,
            budget: budgets[node],
            ratio: avg / budgets[node],
            violated: avg / budgets[node] > 1.0,
        })
        .collect();
    let max_energy_ratio = node_energy.iter().map(|s| s.ratio).fold(0.0, f64::max);
    let energy_violations = node_energy.iter().filter(|s| s.violated).count();

    let summary = RunSummary {
        config: config.clone(),
        seed: validated.seed,
        horizon: validated.horizon,
        v: validated.v,
        strategy: validated.strategy.token().to_string(),
        total_tasks,
        avg_task_latency: latency_sum / total_tasks.max(1) as f64,
        avg_task_latency_expected: expected_latency_sum / total_tasks.max(1) as f64,
        avg_total_energy: sim.ledger().cumulative.iter().sum::<f64>() / t,
        node_energy,
        max_energy_ratio,
        energy_violations,
        regret_expected: regret.avg_expected(),
        regret_realized: regret.avg_realized(),
        avg_dstar: regret.avg_dstar(),
        avg_total_backlog: backlog_sum / t,
        bounds: bounds_summary(&bound, &validated),
        trace_hash,
        curve,
        out_dir: dir.clone(),
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(dir.join(SUMMARY_FILE), json).map_err(io_err(&dir.join(SUMMARY_FILE)))?;
    Ok(summary)
}

fn bounds_summary(bound: &BoundConstants, validated: &crate::config::ValidatedConfig) -> BoundsSummary {
    BoundsSummary {
        b: bound.b,
        theta1: bound.theta1,
        theta2: bound.theta2,
        regret_bound: bound.regret_bound(&validated.constants, validated.horizon, validated.v),
    }
}

/// Reads a previously written summary.
pub fn read_summary(dir: &Path) -> Result<RunSummary, RunError> {
    let path = dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Io {
        path,
        source: io::Error::new(io::ErrorKind::InvalidData, e),
    })
}
