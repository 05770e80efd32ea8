//! Parameter sweeps: run every (value, seed) combination of a base config,
//! in parallel, and emit one combined table plus per-value means across
//! seeds. Per-run determinism makes the scheduling order irrelevant to the
//! outputs; results are keyed and sorted by (value index, seed).

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::runner::{run_once, RunError, RunSummary};

/// Which knob the sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepParam {
    V,
    Arrivals,
    SubsetSize,
    Strategy,
}

impl SweepParam {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "v" => Some(Self::V),
            "arrivals" => Some(Self::Arrivals),
            "na" => Some(Self::SubsetSize),
            "strategy" => Some(Self::Strategy),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::V => "v",
            Self::Arrivals => "arrivals",
            Self::SubsetSize => "na",
            Self::Strategy => "strategy",
        }
    }

    /// Applies one swept value to a copy of the base config.
    pub fn apply(&self, base: &RunConfig, value: &str) -> Result<RunConfig, String> {
        let mut cfg = base.clone();
        match self {
            Self::V => cfg.v = value.parse().map_err(|e| format!("v {value:?}: {e}"))?,
            Self::Arrivals => {
                cfg.arrivals = value.parse().map_err(|e| format!("arrivals {value:?}: {e}"))?
            }
            Self::SubsetSize => {
                cfg.subset_size = value.parse().map_err(|e| format!("na {value:?}: {e}"))?
            }
            Self::Strategy => cfg.strategy = value.to_string(),
        }
        Ok(cfg)
    }
}

/// One row of the combined table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    /// Seed, or `None` for the per-value mean row.
    pub seed: Option<u64>,
    pub avg_task_latency: f64,
    pub avg_total_energy: f64,
    pub regret_expected: f64,
    pub regret_realized: f64,
    pub avg_total_backlog: f64,
    pub max_energy_ratio: f64,
    pub energy_violations: usize,
}

impl SweepRow {
    fn from_summary(value: &str, s: &RunSummary) -> Self {
        Self {
            value: value.to_string(),
            seed: Some(s.seed),
            avg_task_latency: s.avg_task_latency,
            avg_total_energy: s.avg_total_energy,
            regret_expected: s.regret_expected,
            regret_realized: s.regret_realized,
            avg_total_backlog: s.avg_total_backlog,
            max_energy_ratio: s.max_energy_ratio,
            energy_violations: s.energy_violations,
        }
    }

    fn mean_of(value: &str, rows: &[&SweepRow]) -> Self {
        let k = rows.len() as f64;
        Self {
            value: value.to_string(),
            seed: None,
            avg_task_latency: rows.iter().map(|r| r.avg_task_latency).sum::<f64>() / k,
            avg_total_energy: rows.iter().map(|r| r.avg_total_energy).sum::<f64>() / k,
            regret_expected: rows.iter().map(|r| r.regret_expected).sum::<f64>() / k,
            regret_realized: rows.iter().map(|r| r.regret_realized).sum::<f64>() / k,
            avg_total_backlog: rows.iter().map(|r| r.avg_total_backlog).sum::<f64>() / k,
            max_energy_ratio: rows
                .iter()
                .map(|r| r.max_energy_ratio)
                .fold(0.0, f64::max),
            energy_violations: rows.iter().map(|r| r.energy_violations).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub param: String,
    /// Per-run rows sorted by (value order, seed), then one mean row per
    /// value (seed = None).
    pub rows: Vec<SweepRow>,
    pub out_dir: PathBuf,
}

impl SweepTable {
    /// Mean row for a given value.
    pub fn mean_for(&self, value: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.seed.is_none() && r.value == value)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "param,value,seed,avg_task_latency,avg_total_energy,regret_expected,regret_realized,avg_total_backlog,max_energy_ratio,energy_violations\n",
        );
        for r in &self.rows {
            let seed = r.seed.map(|s| s.to_string()).unwrap_or_else(|| "mean".into());
            let _ = writeln!(
                out,
                "{},{},{seed},{},{},{},{},{},{},{}",
                self.param,
                r.value,
                r.avg_task_latency,
                r.avg_total_energy,
                r.regret_expected,
                r.regret_realized,
                r.avg_total_backlog,
                r.max_energy_ratio,
                r.energy_violations,
            );
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep value {value:?}: {reason}")]
    BadValue { value: String, reason: String },
    #[error("run ({param}={value}, seed={seed}): {source}")]
    Run {
        param: String,
        value: String,
        seed: u64,
        #[source]
        source: RunError,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// Runs the full (values x seeds) grid with at most `jobs` concurrent runs
/// and writes `sweep.csv` under the base config's output directory.
pub fn run_sweep(
    base: &RunConfig,
    param: SweepParam,
    values: &[String],
    seeds: &[u64],
    jobs: usize,
) -> Result<SweepTable, SweepError> {
    // Build every run's config up front so value errors surface before any
    // work starts.
    let mut combos = Vec::new();
    for (vi, value) in values.iter().enumerate() {
        for &seed in seeds {
            let mut cfg = param
                .apply(base, value)
                .map_err(|reason| SweepError::BadValue { value: value.clone(), reason })?;
            cfg.seed = seed;
            cfg.run_name = Some(format!("{}-{}-s{}", param.name(), value, seed));
            combos.push((vi, value.clone(), seed, cfg));
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .expect("thread pool");
    let mut results: Vec<(usize, String, u64, Result<RunSummary, RunError>)> = pool.install(|| {
        use rayon::prelude::*;
        combos
            .par_iter()
            .map(|(vi, value, seed, cfg)| (*vi, value.clone(), *seed, run_once(cfg)))
            .collect()
    });
    results.sort_by(|a, b| (a.0, a.2).cmp(&(b.0, b.2)));

    let mut rows = Vec::new();
    for (_, value, seed, result) in results {
        let summary = result.map_err(|source| SweepError::Run {
            param: param.name().into(),
            value: value.clone(),
            seed,
            source,
        })?;
        rows.push(SweepRow::from_summary(&value, &summary));
    }
    for value in values {
        let for_value: Vec<&SweepRow> = rows
            .iter()
            .filter(|r| r.seed.is_some() && &r.value == value)
            .collect();
        if !for_value.is_empty() {
            rows.push(SweepRow::mean_of(value, &for_value));
        }
    }

    let table = SweepTable {
        param: param.name().into(),
        rows,
        out_dir: base.out.clone(),
    };
    fs::create_dir_all(&base.out)?;
    fs::write(base.out.join("sweep.csv"), table.to_csv())?;
    Ok(table)
}
