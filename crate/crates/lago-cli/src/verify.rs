//! Trace verification: re-reads a run's files and recomputes everything
//! that is recomputable from them, demanding bit-exact equality.
//!
//! Checks performed:
//! 1. Aggregate rows are sequential from t = 0 and internally consistent:
//!    total_energy and total_backlog equal the per-node column sums.
//! 2. The queue recursion replays exactly: starting from zero backlogs,
//!    `q <- max(q - b, 0) + e` reproduces every stored q column.
//! 3. The regret running averages replay exactly from the per-slot
//!    expected_latency and dstar columns.
//! 4. At detail slots, per-node energies recompute exactly from the stored
//!    decisions and coefficients, latencies from sizes and realized draws,
//!    and the slot latency equals the task-latency sum.
//! 5. If `summary.json` is present, its trace hash matches the file bytes
//!    and its headline scalars match recomputation from the trace.
//!
//! Exact equality works because every float was written with shortest
//! round-trip formatting and is recomputed with the same operations in the
//! same order as the engine used.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::runner::{read_summary, SUMMARY_FILE};
use crate::trace::{
    file_sha256, read_detail, DetailRow, TraceReadError, TraceReader, DETAIL_FILE, TRACE_FILE,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub slots: u64,
    pub detail_slots: u64,
    pub summary_checked: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error(transparent)]
    Read(#[from] TraceReadError),
    #[error("{path}: {reason}")]
    Layout { path: PathBuf, reason: String },
    #[error("slot {t}: {field} mismatch: stored {stored}, recomputed {recomputed}")]
    Mismatch {
        t: u64,
        field: String,
        stored: f64,
        recomputed: f64,
    },
    #[error("slot {t}: {reason}")]
    Slot { t: u64, reason: String },
    #[error("summary: {reason}")]
    Summary { reason: String },
}

fn exact(t: u64, field: impl Into<String>, stored: f64, recomputed: f64) -> Result<(), VerifyError> {
    if stored.to_bits() == recomputed.to_bits() {
        Ok(())
    } else {
        Err(VerifyError::Mismatch { t, field: field.into(), stored, recomputed })
    }
}

/// Accepts either a run directory or a path to its `trace.csv`.
pub fn verify_run(path: &Path) -> Result<VerifyReport, VerifyError> {
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent()
            .ok_or_else(|| VerifyError::Layout {
                path: path.to_path_buf(),
                reason: "trace path has no parent directory".into(),
            })?
            .to_path_buf()
    };
    let trace_path = dir.join(TRACE_FILE);
    if !trace_path.exists() {
        return Err(VerifyError::Layout {
            path: trace_path,
            reason: "trace.csv not found".into(),
        });
    }
    let reader = TraceReader::read(&trace_path)?;
    let meta = &reader.meta;
    let n_nodes = meta.n_nodes;

    // 1 + 2 + 3: aggregate consistency, queue recursion, regret replay.
    let mut q = vec![0.0f64; n_nodes];
    let mut sum_gap_expected = 0.0f64;
    let mut sum_gap_realized = 0.0f64;
    for (i, row) in reader.rows.iter().enumerate() {
        let t = row.t;
        if t != i as u64 {
            return Err(VerifyError::Slot {
                t,
                reason: format!("expected slot {i} at this position"),
            });
        }
        if row.energy.len() != n_nodes || row.backlog.len() != n_nodes {
            return Err(VerifyError::Slot { t, reason: "per-node column count mismatch".into() });
        }
        exact(t, "total_energy", row.total_energy, row.energy.iter().sum())?;
        exact(t, "total_backlog", row.total_backlog, row.backlog.iter().sum())?;
        for n in 0..n_nodes {
            q[n] = (q[n] - meta.budgets[n]).max(0.0) + row.energy[n];
            exact(t, format!("q_{n}"), row.backlog[n], q[n])?;
        }
        sum_gap_expected += row.expected_latency - row.dstar;
        sum_gap_realized += row.latency - row.dstar;
        let slots = (i + 1) as f64;
        exact(t, "regret_avg_expected", row.regret_avg_expected, sum_gap_expected / slots)?;
        exact(t, "regret_avg_realized", row.regret_avg_realized, sum_gap_realized / slots)?;
    }

    // 4: detail replay.
    let detail_path = dir.join(DETAIL_FILE);
    let mut detail_slots = 0u64;
    if detail_path.exists() {
        let (_, rows) = read_detail(&detail_path)?;
        let mut by_slot: BTreeMap<u64, (Vec<&DetailRow>, Vec<&DetailRow>)> = BTreeMap::new();
        for row in &rows {
            match row {
                DetailRow::Task { t, .. } => by_slot.entry(*t).or_default().0.push(row),
                DetailRow::Node { t, .. } => by_slot.entry(*t).or_default().1.push(row),
            }
        }
        for (t, (task_rows, node_rows)) in by_slot {
            let agg = reader
                .rows
                .get(t as usize)
                .ok_or(VerifyError::Slot { t, reason: "detail for unknown slot".into() })?;
            if t % meta.checkpoint_every != 0 {
                return Err(VerifyError::Slot { t, reason: "detail at a non-checkpoint slot".into() });
            }
            let mut eta = vec![None; n_nodes];
            let mut kappa = vec![None; n_nodes];
            for row in &node_rows {
                if let DetailRow::Node { node, eta: e, kappa: k, energy, backlog, .. } = row {
                    eta[*node] = *e;
                    kappa[*node] = *k;
                    exact(t, format!("detail e_{node}"), agg.energy[*node], *energy)?;
                    exact(t, format!("detail q_{node}"), agg.backlog[*node], *backlog)?;
                }
            }
            if task_rows.len() != agg.n_tasks as usize {
                return Err(VerifyError::Slot {
                    t,
                    reason: format!(
                        "{} task rows but aggregate says {}",
                        task_rows.len(),
                        agg.n_tasks
                    ),
                });
            }
            // Replay energies and latencies in task order.
            let mut energy = vec![0.0f64; n_nodes];
            let mut latency = 0.0f64;
            for row in &task_rows {
                if let DetailRow::Task { node, size_bits, work_cycles, rate, freq, d_tr, d_pr, .. } = row {
                    match rate {
                        Some(r) => {
                            exact(t, "d_tr", *d_tr, size_bits / r)?;
                            let e = eta[*node].ok_or(VerifyError::Slot {
                                t,
                                reason: format!("offload to node {node} without eta"),
                            })?;
                            let k = kappa[*node].ok_or(VerifyError::Slot {
                                t,
                                reason: format!("offload to node {node} without kappa"),
                            })?;
                            energy[0] += e * size_bits;
                            energy[*node] += k * work_cycles;
                        }
                        None => {
                            if *node != 0 {
                                return Err(VerifyError::Slot {
                                    t,
                                    reason: format!("task on node {node} without a rate"),
                                });
                            }
                            exact(t, "d_tr", *d_tr, 0.0)?;
                            let k = kappa[0].ok_or(VerifyError::Slot {
                                t,
                                reason: "local task without device kappa".into(),
                            })?;
                            energy[0] += k * work_cycles;
                        }
                    }
                    exact(t, "d_pr", *d_pr, work_cycles / freq)?;
                    latency += d_tr + d_pr;
                }
            }
            for n in 0..n_nodes {
                exact(t, format!("replayed e_{n}"), agg.energy[n], energy[n])?;
            }
            exact(t, "latency", agg.latency, latency)?;
            detail_slots += 1;
        }
    }

    // 5: summary cross-check.
    let summary_path = dir.join(SUMMARY_FILE);
    let mut summary_checked = false;
    if summary_path.exists() {
        let summary = read_summary(&dir).map_err(|e| VerifyError::Summary { reason: e.to_string() })?;
        let hash = file_sha256(&trace_path).map_err(|e| VerifyError::Summary {
            reason: format!("{}: {e}", trace_path.display()),
        })?;
        if summary.trace_hash != hash {
            return Err(VerifyError::Summary {
                reason: format!("trace hash {hash} does not match stored {}", summary.trace_hash),
            });
        }
        if let Some(last) = reader.rows.last() {
            let total_tasks: u64 = reader.rows.iter().map(|r| r.n_tasks as u64).sum();
            let latency_sum: f64 = reader.rows.iter().map(|r| r.latency).sum();
            let t = reader.rows.len() as f64;
            let checks = [
                ("regret_expected", summary.regret_expected, last.regret_avg_expected),
                ("regret_realized", summary.regret_realized, last.regret_avg_realized),
                (
                    "avg_task_latency",
                    summary.avg_task_latency,
                    latency_sum / total_tasks.max(1) as f64,
                ),
                (
                    "avg_total_backlog",
                    summary.avg_total_backlog,
                    reader.rows.iter().map(|r| r.total_backlog).sum::<f64>() / t,
                ),
            ];
            for (field, stored, recomputed) in checks {
                // Summary scalars are recomputed through a different
                // accumulation order; allow ulp-scale drift.
                let tol = 1e-12 * recomputed.abs().max(1e-300);
                if (stored - recomputed).abs() > tol {
                    return Err(VerifyError::Summary {
                        reason: format!("{field}: stored {stored}, recomputed {recomputed}"),
                    });
                }
            }
            if summary.total_tasks != total_tasks {
                return Err(VerifyError::Summary {
                    reason: format!(
                        "total_tasks: stored {}, recomputed {total_tasks}",
                        summary.total_tasks
                    ),
                });
            }
        }
        summary_checked = true;
    }

    Ok(VerifyReport {
        slots: reader.rows.len() as u64,
        detail_slots,
        summary_checked,
    })
}
