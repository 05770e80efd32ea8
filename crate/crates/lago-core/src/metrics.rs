//! Reward/regret measurement against a clairvoyant baseline, energy-budget
//! feasibility statistics, queue-stability averages, and the closed-form
//! constants of the theoretical backlog and regret bounds.
//!
//! The baseline is the UNCONSTRAINED per-task clairvoyant greedy: for each
//! task it takes the accessible node minimizing the expected latency
//! `rho_n L 1{n>0} + phi_n W` under the hidden true means, ignoring energy
//! budgets. Its per-slot sum D*(t) lower-bounds the expected latency of any
//! feasible assignment, so the regret reported here upper-bounds the regret
//! against the (uncomputable) optimal constrained policy. The constrained
//! stationary optimum is deliberately out of scope.
//!
//! Regret is reported primarily in expected form: the running average of
//! `sum_i (rho_{I_i} L_i 1{I_i>0} + phi_{I_i} W_i) - D*(t)`, i.e. true means
//! applied to the chosen nodes. A secondary series uses the noisy realized
//! latencies instead.

use serde::{Deserialize, Serialize};

use crate::engine::SlotTrace;
use crate::environment::TrueMeans;
use crate::model::{Decision, NodeId, SlotContext, SystemConstants, DEVICE};

/// Expected latency of placing a (size, work) task on `node`.
fn expected_task_latency(
    size_bits: f64,
    work_cycles: f64,
    node: NodeId,
    means: &TrueMeans,
) -> f64 {
    let mut d = means.phi[&node] * work_cycles;
    if node != DEVICE {
        d += means.rho[&node] * size_bits;
    }
    d
}

/// Minimum expected latency over the accessible nodes, and its argmin
/// (ties to the lowest node id).
fn min_expected_latency(
    size_bits: f64,
    work_cycles: f64,
    accessible: impl Iterator<Item = NodeId>,
    means: &TrueMeans,
) -> (f64, NodeId) {
    let mut best = (f64::INFINITY, DEVICE);
    for node in accessible {
        let d = expected_task_latency(size_bits, work_cycles, node, means);
        if d < best.0 {
            best = (d, node);
        }
    }
    best
}

/// The clairvoyant baseline for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotOracle {
    /// D*(t): summed per-task minimum expected latency.
    pub dstar: f64,
    pub decision: Decision,
}

/// Per-task greedy minimization of the expected latency under true means.
pub fn oracle_slot(ctx: &SlotContext, means: &TrueMeans) -> SlotOracle {
    let mut dstar = 0.0;
    let mut assignments = std::collections::BTreeMap::new();
    for task in &ctx.tasks {
        let (d, node) = min_expected_latency(
            task.size_bits,
            task.work_cycles,
            ctx.accessible.iter().copied(),
            means,
        );
        dstar += d;
        assignments.insert(task.id, node);
    }
    SlotOracle { dstar, decision: Decision { assignments } }
}

/// Fills a trace's metric fields: expected latency of its decisions, the
/// slot's D*, and both regret increments.
pub fn fill_slot_metrics(trace: &mut SlotTrace, means: &TrueMeans) {
    let accessible: Vec<NodeId> = trace.accessible_nodes().collect();
    let mut expected = 0.0;
    let mut dstar = 0.0;
    for task in &trace.tasks {
        expected += expected_task_latency(task.size_bits, task.work_cycles, task.node, means);
        dstar += min_expected_latency(
            task.size_bits,
            task.work_cycles,
            accessible.iter().copied(),
            means,
        )
        .0;
    }
    trace.expected_latency = expected;
    trace.dstar = dstar;
    trace.regret_inc_expected = expected - dstar;
    trace.regret_inc_realized = trace.latency - dstar;
}

/// Streaming regret aggregation over a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretAccumulator {
    pub slots: u64,
    pub sum_expected_gap: f64,
    pub sum_realized_gap: f64,
    pub sum_dstar: f64,
}

impl RegretAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fills the trace's metric fields and folds them in.
    pub fn observe(&mut self, trace: &mut SlotTrace, means: &TrueMeans) {
        fill_slot_metrics(trace, means);
        self.slots += 1;
        self.sum_expected_gap += trace.regret_inc_expected;
        self.sum_realized_gap += trace.regret_inc_realized;
        self.sum_dstar += trace.dstar;
    }

    /// R(t) in expected form: (1/t) sum of expected-latency gaps.
    pub fn avg_expected(&self) -> f64 {
        if self.slots == 0 { 0.0 } else { self.sum_expected_gap / self.slots as f64 }
    }

    /// Secondary series using realized latencies.
    pub fn avg_realized(&self) -> f64 {
        if self.slots == 0 { 0.0 } else { self.sum_realized_gap / self.slots as f64 }
    }

    /// Time-averaged D*: the baseline's expected per-slot latency.
    pub fn avg_dstar(&self) -> f64 {
        if self.slots == 0 { 0.0 } else { self.sum_dstar / self.slots as f64 }
    }
}

/// Both regret series at full slot resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretCurves {
    /// expected[t] = R(t+1) in expected form.
    pub expected: Vec<f64>,
    pub realized: Vec<f64>,
}

/// Computes the running-average regret curves, filling each trace's metric
/// fields along the way.
pub fn regret_curve(traces: &mut [SlotTrace], means: &TrueMeans) -> RegretCurves {
    let mut acc = RegretAccumulator::new();
    let mut expected = Vec::with_capacity(traces.len());
    let mut realized = Vec::with_capacity(traces.len());
    for trace in traces {
        acc.observe(trace, means);
        expected.push(acc.avg_expected());
        realized.push(acc.avg_realized());
    }
    RegretCurves { expected, realized }
}

/// Time-averaged energy per node with its budget ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEnergyStat {
    pub node: NodeId,
    pub avg_energy: f64,
    pub budget: f64,
    pub ratio: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub per_node: Vec<NodeEnergyStat>,
    /// Running average of the summed per-node energies, one point per slot.
    pub running_total_avg: Vec<f64>,
}

/// Per-node time-averaged energy over a completed run, flagged against the
/// budgets.
pub fn feasibility_report(traces: &[SlotTrace], budgets: &[f64]) -> FeasibilityReport {
    let n_nodes = budgets.len();
    let mut sums = vec![0.0; n_nodes];
    let mut running = Vec::with_capacity(traces.len());
    let mut total = 0.0;
    for (i, tr) in traces.iter().enumerate() {
        for rec in &tr.nodes {
            sums[rec.node] += rec.energy;
        }
        total += tr.total_energy();
        running.push(total / (i + 1) as f64);
    }
    let t = traces.len().max(1) as f64;
    let per_node = (0..n_nodes)
        .map(|node| {
            let avg = sums[node] / t;
            let ratio = avg / budgets[node];
            NodeEnergyStat {
                node,
                avg_energy: avg,
                budget: budgets[node],
                ratio,
                violated: ratio > 1.0,
            }
        })
        .collect();
    FeasibilityReport { per_node, running_total_avg: running }
}

/// Running time-average of the total virtual-queue backlog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueStats {
    /// series[t] = (1/(t+1)) sum over the first t+1 slots of the total
    /// backlog.
    pub series: Vec<f64>,
    pub final_avg: f64,
}

pub fn queue_stats(traces: &[SlotTrace]) -> QueueStats {
    let mut sum = 0.0;
    let mut series = Vec::with_capacity(traces.len());
    for (i, tr) in traces.iter().enumerate() {
        sum += tr.total_backlog();
        series.push(sum / (i + 1) as f64);
    }
    let final_avg = series.last().copied().unwrap_or(0.0);
    QueueStats { series, final_avg }
}

/// Closed-form constants of the backlog and regret bounds:
///
/// ```text
/// B  = sum_n b_n^2 / 2
///    + a_max^2 max{kappa_max^2 w_max^2, eta_max^2 l_max^2} / 2
///    + N^2 a_max^2 kappa_max^2 w_max^2 / 2
/// theta1 = 2 w_max phi_max a_max
/// theta2 = 2 l_max rho_max a_max
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub b: f64,
    pub theta1: f64,
    pub theta2: f64,
}

pub fn bound_constants(constants: &SystemConstants, budgets: &[f64]) -> BoundConstants {
    let budget_term: f64 = budgets.iter().map(|b| b * b).sum::<f64>() / 2.0;
    let a = constants.a_max as f64;
    let n = constants.n_fog as f64;
    let kw = constants.kappa_max * constants.w_max;
    let el = constants.eta_max * constants.l_max;
    let b = budget_term + a * a * (kw * kw).max(el * el) / 2.0 + n * n * a * a * kw * kw / 2.0;
    BoundConstants {
        b,
        theta1: 2.0 * constants.w_max * constants.phi_max * a,
        theta2: 2.0 * constants.l_max * constants.rho_max * a,
    }
}

impl BoundConstants {
    /// Regret bound at horizon T with tradeoff parameter V:
    ///
    /// ```text
    /// B/V + (3/(2T) + sqrt(6 a_max (N+1) ln T / T)) theta1
    ///     + (3/(2T) + sqrt(6 a_max  N    ln T / T)) theta2
    /// ```
    pub fn regret_bound(&self, constants: &SystemConstants, t: u64, v: f64) -> f64 {
        let tf = t as f64;
        let ln_t = if t > 1 { tf.ln() } else { 0.0 };
        let a = constants.a_max as f64;
        let n = constants.n_fog as f64;
        let r1 = 3.0 / (2.0 * tf) + (6.0 * a * (n + 1.0) * ln_t / tf).sqrt();
        let r2 = 3.0 / (2.0 * tf) + (6.0 * a * n * ln_t / tf).sqrt();
        self.b / v + r1 * self.theta1 + r2 * self.theta2
    }

    /// Backlog bound (B + V (theta1 + theta2)) / epsilon for a user-supplied
    /// feasibility slack epsilon.
    pub fn backlog_bound(&self, v: f64, epsilon: f64) -> f64 {
        (self.b + v * (self.theta1 + self.theta2)) / epsilon
    }
}
