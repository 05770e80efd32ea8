//! The control side of the scheme: per-node virtual queues tracking energy
//! debt, the price of assigning a task to a node, price-minimizing node
//! selection, and per-slot energy accounting.
//!
//! The price of putting task i on node n in slot t is
//!
//! ```text
//! v_in = Q_n kappa_n W_i + Q_0 eta_n L_i 1{n>0}
//!      + V (phi_hat_n W_i + rho_hat_n L_i 1{n>0})
//! ```
//!
//! the first group weighing the energy debt of the involved queues, the
//! second the estimated latency scaled by the tradeoff parameter V. Each
//! task independently takes the accessible node with the minimum price; ties
//! break to the lowest node id. Queues update once per slot,
//!
//! ```text
//! Q_n(t+1) = max(Q_n(t) - b_n, 0) + E_n(t)
//! ```
//!
//! applied to every node each slot, accessible or not (inaccessible nodes
//! simply receive no energy). Prices are never clamped: a growing queue must
//! be allowed to dominate the argmin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::learner::{Estimates, Strategy};
use crate::model::{Decision, NodeId, SlotContext, Task, DEVICE};

/// Virtual queue backlogs (joules of energy debt) and per-slot budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    backlog: Vec<f64>,
    budget: Vec<f64>,
}

impl QueueState {
    /// All queues start empty (Q_n(0) = 0).
    pub fn new(budgets: Vec<f64>) -> Result<Self, ControlError> {
        if budgets.is_empty() || budgets.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(ControlError::BadBudget);
        }
        Ok(Self {
            backlog: vec![0.0; budgets.len()],
            budget: budgets,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.backlog.len()
    }

    pub fn backlog(&self) -> &[f64] {
        &self.backlog
    }

    pub fn budgets(&self) -> &[f64] {
        &self.budget
    }

    pub fn total_backlog(&self) -> f64 {
        self.backlog.iter().sum()
    }
}

/// Per-slot and cumulative energy bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub per_slot: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub slots_elapsed: u64,
}

impl EnergyLedger {
    pub fn new(n_nodes: usize) -> Self {
        Self {
            per_slot: vec![0.0; n_nodes],
            cumulative: vec![0.0; n_nodes],
            slots_elapsed: 0,
        }
    }

    pub fn record(&mut self, energies: &[f64]) {
        self.per_slot.copy_from_slice(energies);
        for (c, e) in self.cumulative.iter_mut().zip(energies) {
            *c += e;
        }
        self.slots_elapsed += 1;
    }

    /// Time-averaged energy per node over the slots recorded so far.
    pub fn time_averages(&self) -> Vec<f64> {
        if self.slots_elapsed == 0 {
            return vec![0.0; self.cumulative.len()];
        }
        let t = self.slots_elapsed as f64;
        self.cumulative.iter().map(|c| c / t).collect()
    }
}

/// Price of assigning `task` to `node` under the supplied estimates.
pub fn price(
    task: &Task,
    node: NodeId,
    queues: &QueueState,
    ctx: &SlotContext,
    rho_hat: f64,
    phi_hat: f64,
    v: f64,
) -> Result<f64, ControlError> {
    if !ctx.is_accessible(node) {
        return Err(ControlError::NotAccessible { node, t: ctx.t });
    }
    let kappa = *ctx.kappa.get(&node).ok_or(ControlError::MissingCoefficient { node })?;
    let w = task.work_cycles;
    let mut p = queues.backlog[node] * kappa * w + v * phi_hat * w;
    if node != DEVICE {
        let eta = *ctx.eta.get(&node).ok_or(ControlError::MissingCoefficient { node })?;
        let l = task.size_bits;
        p += queues.backlog[DEVICE] * eta * l + v * rho_hat * l;
    }
    Ok(p)
}

/// Assigns every task of the slot to its price-minimizing accessible node.
///
/// Under `EpsGreedy` a coin is flipped per task: with probability epsilon
/// the task goes to a uniformly random accessible node, otherwise to the
/// argmin (whose estimates are the empirical means under that strategy).
/// Ties break to the lowest node id; `ctx.accessible` is sorted, so the
/// first strict minimum wins. Queues are not touched here: they update once
/// per slot, after energies are known.
pub fn select(
    ctx: &SlotContext,
    queues: &QueueState,
    estimates: &Estimates,
    v: f64,
    strategy: Strategy,
    rng: &mut impl Rng,
) -> Result<Decision, ControlError> {
    let epsilon = match strategy {
        Strategy::EpsGreedy { epsilon } => Some(epsilon),
        _ => None,
    };
    let mut assignments = std::collections::BTreeMap::new();
    for task in &ctx.tasks {
        let explore = match epsilon {
            Some(eps) => rng.gen::<f64>() < eps,
            None => false,
        };
        let node = if explore {
            ctx.accessible[rng.gen_range(0..ctx.accessible.len())]
        } else {
            argmin_price(task, ctx, queues, estimates, v)?
        };
        assignments.insert(task.id, node);
    }
    Ok(Decision { assignments })
}

fn argmin_price(
    task: &Task,
    ctx: &SlotContext,
    queues: &QueueState,
    estimates: &Estimates,
    v: f64,
) -> Result<NodeId, ControlError> {
    let mut best = ctx.accessible[0];
    let mut best_price = f64::INFINITY;
    for &node in &ctx.accessible {
        let p = price(
            task,
            node,
            queues,
            ctx,
            estimates.rho_hat[node],
            estimates.phi_hat[node],
            v,
        )?;
        if p < best_price {
            best_price = p;
            best = node;
        }
    }
    Ok(best)
}

/// Per-node energy of one slot's decision: the device pays kappa_0 W for
/// each local task and eta_n L for each offloaded one; fog node n pays
/// kappa_n W for each task it receives. Accumulated in task order.
pub fn slot_energy(ctx: &SlotContext, decision: &Decision) -> Result<Vec<f64>, ControlError> {
    decision
        .validate(ctx)
        .map_err(|e| ControlError::BadDecision(e.to_string()))?;
    let n_nodes = 1 + *ctx.kappa.keys().max().unwrap_or(&0);
    let mut energy = vec![0.0; n_nodes];
    for task in &ctx.tasks {
        let node = decision.node_for(task.id).expect("validated above");
        if node == DEVICE {
            energy[DEVICE] += ctx.kappa[&DEVICE] * task.work_cycles;
        } else {
            energy[DEVICE] += ctx.eta[&node] * task.size_bits;
            energy[node] += ctx.kappa[&node] * task.work_cycles;
        }
    }
    Ok(energy)
}

/// Applies Q <- max(Q - b, 0) + E to every node. `energies` may be shorter
/// than the node count (trailing nodes received nothing).
pub fn update_queues(queues: &mut QueueState, energies: &[f64]) -> Result<(), ControlError> {
    if energies.len() > queues.backlog.len() {
        return Err(ControlError::BadEnergyVector {
            reason: format!(
                "{} energy entries for {} nodes",
                energies.len(),
                queues.backlog.len()
            ),
        });
    }
    if let Some(e) = energies.iter().find(|e| !(**e >= 0.0) || !e.is_finite()) {
        return Err(ControlError::BadEnergyVector {
            reason: format!("negative or non-finite energy {e}"),
        });
    }
    for (n, q) in queues.backlog.iter_mut().enumerate() {
        let e = energies.get(n).copied().unwrap_or(0.0);
        *q = (*q - queues.budget[n]).max(0.0) + e;
    }
    Ok(())
}

#[derive(Debug, thiserror::Error)]
pub enum ControlError {
    #[error("budgets must be a non-empty positive vector")]
    BadBudget,
    #[error("node {node} is not accessible in slot {t}")]
    NotAccessible { node: NodeId, t: u64 },
    #[error("missing energy coefficient for node {node}")]
    MissingCoefficient { node: NodeId },
    #[error("invalid decision: {0}")]
    BadDecision(String),
    #[error("invalid energy vector: {reason}")]
    BadEnergyVector { reason: String },
}
