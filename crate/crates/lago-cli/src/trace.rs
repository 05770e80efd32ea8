//! Trace persistence: delimited tabular text with a self-describing header.
//!
//! A run writes two files:
//!
//! - `trace.csv`: one aggregate row per slot. Columns (header row):
//!   `t,n_tasks,latency,expected_latency,dstar,regret_avg_expected,
//!   regret_avg_realized,total_energy,total_backlog,estimate_hash,
//!   e_0..e_N,q_0..q_N`.
//! - `detail.csv`: full per-task and per-node rows for slots where
//!   `t % checkpoint_every == 0`, discriminated by a leading `record`
//!   column (`task` or `node`).
//!
//! Both files start with `# key=value` metadata lines (format version, node
//! count, budgets, v, seed, strategy, horizon, checkpoint_every). Floats are
//! written with Rust's shortest round-trip formatting, so a verifier can
//! re-read them bit-exactly and demand exact equality when it replays the
//! queue recursion and energy sums.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use lago_core::engine::SlotTrace;

pub const TRACE_FORMAT: &str = "lago-trace.v1";
pub const DETAIL_FORMAT: &str = "lago-detail.v1";
pub const TRACE_FILE: &str = "trace.csv";
pub const DETAIL_FILE: &str = "detail.csv";

/// Run-level metadata embedded in both files.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub n_nodes: usize,
    pub budgets: Vec<f64>,
    pub v: f64,
    pub seed: u64,
    pub strategy: String,
    pub horizon: u64,
    pub checkpoint_every: u64,
}

impl TraceMeta {
    fn header_lines(&self, format: &str) -> String {
        let budgets = self
            .budgets
            .iter()
            .map(|b| b.to_string())
            .collect::<Vec<_>>()
            .join(";");
        format!(
            "# format={format}\n# n_nodes={}\n# budgets={budgets}\n# v={}\n# seed={}\n# strategy={}\n# horizon={}\n# checkpoint_every={}\n",
            self.n_nodes, self.v, self.seed, self.strategy, self.horizon, self.checkpoint_every
        )
    }
}

/// Writer that tees everything into a SHA-256 hasher so the trace content
/// hash lands in the summary without a second pass.
struct HashingWriter {
    inner: BufWriter<File>,
    hasher: Sha256,
}

impl HashingWriter {
    fn create(path: &Path) -> io::Result<Self> {
        Ok(Self {
            inner: BufWriter::new(File::create(path)?),
            hasher: Sha256::new(),
        })
    }

    fn write_all(&mut self, data: &str) -> io::Result<()> {
        self.hasher.update(data.as_bytes());
        self.inner.write_all(data.as_bytes())
    }

    fn finish(mut self) -> io::Result<String> {
        self.inner.flush()?;
        Ok(hex_digest(self.hasher))
    }
}

fn hex_digest(hasher: Sha256) -> String {
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for byte in digest {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

/// SHA-256 of a file's bytes, hex-encoded.
pub fn file_sha256(path: &Path) -> io::Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(std::fs::read(path)?);
    Ok(hex_digest(hasher))
}

pub struct TraceWriter {
    trace: HashingWriter,
    detail: BufWriter<File>,
    checkpoint_every: u64,
    n_nodes: usize,
    line: String,
}

impl TraceWriter {
    pub fn create(dir: &Path, meta: &TraceMeta) -> io::Result<Self> {
        let mut trace = HashingWriter::create(&dir.join(TRACE_FILE))?;
        trace.write_all(&meta.header_lines(TRACE_FORMAT))?;
        let mut header = String::from(
            "t,n_tasks,latency,expected_latency,dstar,regret_avg_expected,regret_avg_realized,total_energy,total_backlog,estimate_hash",
        );
        for n in 0..meta.n_nodes {
            let _ = write!(header, ",e_{n}");
        }
        for n in 0..meta.n_nodes {
            let _ = write!(header, ",q_{n}");
        }
        header.push('\n');
        trace.write_all(&header)?;

        let mut detail = BufWriter::new(File::create(dir.join(DETAIL_FILE))?);
        detail.write_all(meta.header_lines(DETAIL_FORMAT).as_bytes())?;
        detail.write_all(
            b"# task: record,t,ordinal,size_bits,work_cycles,node,rate,freq,d_tr,d_pr\n",
        )?;
        detail.write_all(
            b"# node: record,t,node,accessible,eta,kappa,energy,backlog,count,mean_rho,mean_phi,rho_hat,phi_hat\n",
        )?;
        Ok(Self {
            trace,
            detail,
            checkpoint_every: meta.checkpoint_every,
            n_nodes: meta.n_nodes,
            line: String::with_capacity(1024),
        })
    }

    /// Appends the slot's aggregate row (every slot) and its detail rows
    /// (checkpoint slots). `regret_avg_*` are the running averages after
    /// this slot.
    pub fn write_slot(
        &mut self,
        tr: &SlotTrace,
        regret_avg_expected: f64,
        regret_avg_realized: f64,
    ) -> io::Result<()> {
        debug_assert_eq!(tr.nodes.len(), self.n_nodes);
        let line = &mut self.line;
        line.clear();
        let _ = write!(
            line,
            "{},{},{},{},{},{},{},{},{},{:016x}",
            tr.t,
            tr.tasks.len(),
            tr.latency,
            tr.expected_latency,
            tr.dstar,
            regret_avg_expected,
            regret_avg_realized,
            tr.total_energy(),
            tr.total_backlog(),
            tr.estimate_hash,
        );
        for rec in &tr.nodes {
            let _ = write!(line, ",{}", rec.energy);
        }
        for rec in &tr.nodes {
            let _ = write!(line, ",{}", rec.backlog_after);
        }
        line.push('\n');
        self.trace.write_all(line)?;

        if tr.t % self.checkpoint_every == 0 {
            for task in &tr.tasks {
                let rate = task.rate.map(|r| r.to_string()).unwrap_or_default();
                writeln!(
                    self.detail,
                    "task,{},{},{},{},{},{rate},{},{},{}",
                    tr.t,
                    task.ordinal,
                    task.size_bits,
                    task.work_cycles,
                    task.node,
                    task.freq,
                    task.d_tr,
                    task.d_pr,
                )?;
            }
            for rec in &tr.nodes {
                let eta = rec.eta.map(|x| x.to_string()).unwrap_or_default();
                let kappa = rec.kappa.map(|x| x.to_string()).unwrap_or_default();
                writeln!(
                    self.detail,
                    "node,{},{},{},{eta},{kappa},{},{},{},{},{},{},{}",
                    tr.t,
                    rec.node,
                    rec.accessible as u8,
                    rec.energy,
                    rec.backlog_after,
                    rec.count,
                    rec.mean_rho,
                    rec.mean_phi,
                    rec.rho_hat,
                    rec.phi_hat,
                )?;
            }
        }
        Ok(())
    }

    /// Flushes both files and returns the trace content hash.
    pub fn finish(mut self) -> io::Result<String> {
        self.detail.flush()?;
        self.trace.finish()
    }
}

/// One parsed aggregate row.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub n_tasks: u32,
    pub latency: f64,
    pub expected_latency: f64,
    pub dstar: f64,
    pub regret_avg_expected: f64,
    pub regret_avg_realized: f64,
    pub total_energy: f64,
    pub total_backlog: f64,
    pub estimate_hash: u64,
    pub energy: Vec<f64>,
    pub backlog: Vec<f64>,
}

/// One parsed detail row.
#[derive(Debug, Clone, PartialEq)]
pub enum DetailRow {
    Task {
        t: u64,
        ordinal: u32,
        size_bits: f64,
        work_cycles: f64,
        node: usize,
        rate: Option<f64>,
        freq: f64,
        d_tr: f64,
        d_pr: f64,
    },
    Node {
        t: u64,
        node: usize,
        accessible: bool,
        eta: Option<f64>,
        kappa: Option<f64>,
        energy: f64,
        backlog: f64,
        count: u64,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum TraceReadError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Parse { path: PathBuf, line: usize, reason: String },
}

pub struct TraceReader {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
}

fn parse_meta(
    lines: &[(usize, String)],
    path: &Path,
    expected_format: &str,
) -> Result<TraceMeta, TraceReadError> {
    let mut pairs = std::collections::BTreeMap::new();
    for (lineno, line) in lines {
        let rest = line.trim_start_matches('#').trim();
        if let Some((k, val)) = rest.split_once('=') {
            pairs.insert(k.trim().to_string(), (*lineno, val.trim().to_string()));
        }
    }
    let get = |key: &str| -> Result<String, TraceReadError> {
        pairs
            .get(key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| TraceReadError::Parse {
                path: path.to_path_buf(),
                line: 0,
                reason: format!("missing metadata key {key}"),
            })
    };
    let bad = |line: usize, reason: String| TraceReadError::Parse {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let format = get("format")?;
    if format != expected_format {
        return Err(bad(1, format!("expected format {expected_format}, found {format}")));
    }
    let budgets: Result<Vec<f64>, _> = get("budgets")?
        .split(';')
        .map(|s| s.parse::<f64>())
        .collect();
    Ok(TraceMeta {
        n_nodes: get("n_nodes")?.parse().map_err(|e| bad(0, format!("n_nodes: {e}")))?,
        budgets: budgets.map_err(|e| bad(0, format!("budgets: {e}")))?,
        v: get("v")?.parse().map_err(|e| bad(0, format!("v: {e}")))?,
        seed: get("seed")?.parse().map_err(|e| bad(0, format!("seed: {e}")))?,
        strategy: get("strategy")?,
        horizon: get("horizon")?.parse().map_err(|e| bad(0, format!("horizon: {e}")))?,
        checkpoint_every: get("checkpoint_every")?
            .parse()
            .map_err(|e| bad(0, format!("checkpoint_every: {e}")))?,
    })
}

impl TraceReader {
    pub fn read(path: &Path) -> Result<Self, TraceReadError> {
        let text = std::fs::read_to_string(path).map_err(|e| TraceReadError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut meta_lines = Vec::new();
        let mut rows = Vec::new();
        let mut meta: Option<TraceMeta> = None;
        let mut n_nodes = 0usize;
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            let bad = |reason: String| TraceReadError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                reason,
            };
            if line.starts_with('#') {
                meta_lines.push((lineno, line.to_string()));
                continue;
            }
            if line.is_empty() {
                continue;
            }
            if meta.is_none() {
                // Column header row terminates the metadata block.
                if !line.starts_with("t,") {
                    return Err(bad(format!("expected header row, found {line:?}")));
                }
                let parsed = parse_meta(&meta_lines, path, TRACE_FORMAT)?;
                n_nodes = parsed.n_nodes;
                meta = Some(parsed);
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            let expect = 10 + 2 * n_nodes;
            if fields.len() != expect {
                return Err(bad(format!("expected {expect} fields, found {}", fields.len())));
            }
            let f = |i: usize| -> Result<f64, TraceReadError> {
                fields[i].parse().map_err(|e| TraceReadError::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    reason: format!("field {i}: {e}"),
                })
            };
            let energy: Result<Vec<f64>, _> = (10..10 + n_nodes).map(f).collect();
            let backlog: Result<Vec<f64>, _> = (10 + n_nodes..10 + 2 * n_nodes).map(f).collect();
            rows.push(TraceRow {
                t: fields[0].parse().map_err(|e| bad(format!("t: {e}")))?,
                n_tasks: fields[1].parse().map_err(|e| bad(format!("n_tasks: {e}")))?,
                latency: f(2)?,
                expected_latency: f(3)?,
                dstar: f(4)?,
                regret_avg_expected: f(5)?,
                regret_avg_realized: f(6)?,
                total_energy: f(7)?,
                total_backlog: f(8)?,
                estimate_hash: u64::from_str_radix(fields[9], 16)
                    .map_err(|e| bad(format!("estimate_hash: {e}")))?,
                energy: energy?,
                backlog: backlog?,
            });
        }
        let meta = match meta {
            Some(m) => m,
            None => parse_meta(&meta_lines, path, TRACE_FORMAT)?,
        };
        Ok(Self { meta, rows })
    }
}

/// Reads every detail row of `detail.csv`.
pub fn read_detail(path: &Path) -> Result<(TraceMeta, Vec<DetailRow>), TraceReadError> {
    let text = std::fs::read_to_string(path).map_err(|e| TraceReadError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut meta_lines = Vec::new();
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let bad = |reason: String| TraceReadError::Parse {
            path: path.to_path_buf(),
            line: lineno,
            reason,
        };
        if line.starts_with('#') {
            meta_lines.push((lineno, line.to_string()));
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let opt = |s: &str| -> Result<Option<f64>, TraceReadError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e| TraceReadError::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    reason: format!("{e}"),
                })
            }
        };
        let req = |s: &str| -> Result<f64, TraceReadError> {
            s.parse().map_err(|e| TraceReadError::Parse {
                path: path.to_path_buf(),
                line: lineno,
                reason: format!("{e}"),
            })
        };
        match fields[0] {
            "task" => {
                if fields.len() != 10 {
                    return Err(bad(format!("task row needs 10 fields, found {}", fields.len())));
                }
                rows.push(DetailRow::Task {
                    t: fields[1].parse().map_err(|e| bad(format!("t: {e}")))?,
                    ordinal: fields[2].parse().map_err(|e| bad(format!("ordinal: {e}")))?,
                    size_bits: req(fields[3])?,
                    work_cycles: req(fields[4])?,
                    node: fields[5].parse().map_err(|e| bad(format!("node: {e}")))?,
                    rate: opt(fields[6])?,
                    freq: req(fields[7])?,
                    d_tr: req(fields[8])?,
                    d_pr: req(fields[9])?,
                });
            }
            "node" => {
                if fields.len() != 13 {
                    return Err(bad(format!("node row needs 13 fields, found {}", fields.len())));
                }
                rows.push(DetailRow::Node {
                    t: fields[1].parse().map_err(|e| bad(format!("t: {e}")))?,
                    node: fields[2].parse().map_err(|e| bad(format!("node: {e}")))?,
                    accessible: fields[3] == "1",
                    eta: opt(fields[4])?,
                    kappa: opt(fields[5])?,
                    energy: req(fields[6])?,
                    backlog: req(fields[7])?,
                    count: fields[8].parse().map_err(|e| bad(format!("count: {e}")))?,
                });
            }
            other => return Err(bad(format!("unknown record kind {other:?}"))),
        }
    }
    let meta = parse_meta(&meta_lines, path, DETAIL_FORMAT)?;
    Ok((meta, rows))
}
