//! `lago` - seeded runs, parameter sweeps, and trace verification for the
//! green-offloading simulator.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 run error,
//! 5 verification mismatch.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lago_cli::config::RunConfig;
use lago_cli::runner::{run_once, RunError};
use lago_cli::sweep::{run_sweep, SweepError, SweepParam};
use lago_cli::verify::verify_run;

#[derive(Parser)]
#[command(
    name = "lago",
    about = "Learning-aided green offloading simulator",
    long_about = "Deterministic simulator for online task offloading in a fog-assisted IoT \
                  system: UCB-family estimates of unknown transmission/processing latencies \
                  combined with per-node virtual queues that enforce long-term time-averaged \
                  energy budgets.\n\nTask sizes default to a log-uniform stand-in distribution \
                  ([1e5, 1e7] bits) because the trace dataset used by the original evaluation \
                  is not redistributable; override [tasks] in the config file to rescale."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config file; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// PRNG seed (the run is a pure function of config + seed).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of slots to simulate.
    #[arg(long)]
    horizon: Option<u64>,
    /// Latency-energy tradeoff parameter V.
    #[arg(long)]
    v: Option<f64>,
    /// Accessible fog nodes per slot (n_a).
    #[arg(long)]
    na: Option<u32>,
    /// Tasks per slot.
    #[arg(long)]
    arrivals: Option<u32>,
    /// Estimator: ucb1 | ucbt | nconfr | eps.
    #[arg(long)]
    strategy: Option<String>,
    /// Exploration probability for the eps strategy.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Output directory root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Detail/curve checkpoint interval in slots.
    #[arg(long)]
    checkpoint_every: Option<u64>,
}

impl RunArgs {
    fn build_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
                    path: path.clone(),
                    source: e,
                })?;
                RunConfig::from_toml(&text).map_err(CliError::Config)?
            }
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(horizon) = self.horizon {
            cfg.horizon = horizon;
        }
        if let Some(v) = self.v {
            cfg.v = v;
        }
        if let Some(na) = self.na {
            cfg.subset_size = na;
        }
        if let Some(arrivals) = self.arrivals {
            cfg.arrivals = arrivals;
        }
        if let Some(strategy) = &self.strategy {
            cfg.strategy = strategy.clone();
        }
        if let Some(epsilon) = self.epsilon {
            cfg.epsilon = epsilon;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(ck) = self.checkpoint_every {
            cfg.checkpoint_every = ck;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Execute one seeded run and write trace + summary artifacts.
    Run(RunArgs),
    /// Run a (values x seeds) grid varying one parameter.
    Sweep {
        #[command(flatten)]
        base: RunArgs,
        /// Parameter to vary: v | arrivals | na | strategy.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 50,100,200 or ucb1,eps.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
        /// Comma-separated seeds, one run per (value, seed).
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        seeds: Vec<u64>,
        /// Maximum concurrent runs.
        #[arg(long, default_value_t = 4)]
        jobs: u32,
    },
    /// Re-read a run's trace and recompute queue updates, energies, and
    /// regret averages, demanding exact equality with the stored values.
    Verify {
        /// Run directory or path to its trace.csv.
        trace: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(lago_core::model::InvalidConfig),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Run(RunError),
    #[error("{0}")]
    Sweep(SweepError),
    #[error("verification failed: {0}")]
    Verify(#[from] lago_cli::verify::VerifyError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Run(_) | CliError::Sweep(_) => 4,
            CliError::Verify(_) => 5,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => CliError::Config(c),
            RunError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Run(other),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Run { source: RunError::Config(c), .. } => CliError::Config(c),
            other => CliError::Sweep(other),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.build_config()?;
            let summary = run_once(&cfg)?;
            println!(
                "run {} finished: {} slots, avg latency {:.6e} s/task, avg energy {:.4} J/slot, \
                 regret {:.6e} s/slot, backlog {:.4} J, max energy ratio {:.4}",
                cfg.run_name(),
                summary.horizon,
                summary.avg_task_latency,
                summary.avg_total_energy,
                summary.regret_expected,
                summary.avg_total_backlog,
                summary.max_energy_ratio,
            );
            println!("artifacts in {}", summary.out_dir.display());
            Ok(())
        }
        Command::Sweep { base, param, values, seeds, jobs } => {
            let cfg = base.build_config()?;
            let param = SweepParam::parse(&param).ok_or_else(|| {
                let mut v = lago_core::model::Violations::new();
                v.push("param", format!("unknown sweep parameter {param:?} (v|arrivals|na|strategy)"));
                CliError::Config(v.into_result().unwrap_err())
            })?;
            let table = run_sweep(&cfg, param, &values, &seeds, jobs as usize)?;
            print!("{}", table.to_csv());
            println!("table written to {}", cfg.out.join("sweep.csv").display());
            Ok(())
        }
        Command::Verify { trace } => {
            let report = verify_run(&trace)?;
            println!(
                "verified {} slots ({} with full detail){}",
                report.slots,
                report.detail_slots,
                if report.summary_checked { ", summary consistent" } else { "" }
            );
            Ok(())
        }
    }
}
