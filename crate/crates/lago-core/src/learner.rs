//! Per-node selection counts, empirical means of the reciprocal rate and
//! frequency observations, and the optimistic estimates fed to the price
//! minimizer.
//!
//! The UCB1 estimate of the per-cycle latency on node n at slot t is
//!
//! ```text
//! phi_hat_n(t) = max(phi_bar_n(t) - phi_max * sqrt(3 ln t / (2 h_n(t))), 0)
//! ```
//!
//! and analogously for the per-bit latency rho with rho_max. Because the
//! scheme minimizes latency, optimism means subtracting the confidence
//! radius; an unvisited node keeps estimate 0, the most optimistic value, so
//! every accessible node is eventually tried while its queue is small.
//!
//! Strategies:
//! - `Ucb1`: the radius above.
//! - `UcbTuned`: variance-aware radius
//!   `max * sqrt((ln t / h) * min(1/4, V_n))` with
//!   `V_n = var(obs/max) + sqrt(2 ln t / h)`.
//! - `NoConfRadius`: zero radius; estimates are the empirical means, so
//!   exploration happens only implicitly through the virtual queues.
//! - `EpsGreedy`: estimates are the empirical means; the exploration coin is
//!   flipped per task at selection time (not here).
//!
//! Estimates are snapshotted once per slot and reused for every task in the
//! slot; they never include the current slot's feedback.

use serde::{Deserialize, Serialize};

use crate::model::{Decision, Feedback, SlotContext, SystemConstants, DEVICE};

/// Which optimism rule produces the estimates (and, for `EpsGreedy`, how
/// selection explores).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Ucb1,
    UcbTuned,
    NoConfRadius,
    EpsGreedy { epsilon: f64 },
}

impl Strategy {
    /// Parses the CLI token: ucb1 | ucbt | nconfr | eps.
    pub fn parse(token: &str, epsilon: f64) -> Option<Self> {
        match token {
            "ucb1" => Some(Strategy::Ucb1),
            "ucbt" => Some(Strategy::UcbTuned),
            "nconfr" => Some(Strategy::NoConfRadius),
            "eps" => Some(Strategy::EpsGreedy { epsilon }),
            _ => None,
        }
    }

    pub fn token(&self) -> &'static str {
        match self {
            Strategy::Ucb1 => "ucb1",
            Strategy::UcbTuned => "ucbt",
            Strategy::NoConfRadius => "nconfr",
            Strategy::EpsGreedy { .. } => "eps",
        }
    }
}

/// Selection counts and empirical means per node. Index 0 of the rho arrays
/// is unused (the device never transmits).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerState {
    strategy: Strategy,
    /// h_n: tasks ever assigned to node n.
    counts: Vec<u64>,
    mean_rho: Vec<f64>,
    mean_phi: Vec<f64>,
    /// Sums of squared observations, kept for the variance-aware radius.
    sumsq_rho: Vec<f64>,
    sumsq_phi: Vec<f64>,
}

/// Per-slot snapshot of the optimistic estimates, covering every node id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimates {
    pub rho_hat: Vec<f64>,
    pub phi_hat: Vec<f64>,
}

impl LearnerState {
    pub fn new(n_nodes: usize, strategy: Strategy) -> Self {
        Self {
            strategy,
            counts: vec![0; n_nodes],
            mean_rho: vec![0.0; n_nodes],
            mean_phi: vec![0.0; n_nodes],
            sumsq_rho: vec![0.0; n_nodes],
            sumsq_phi: vec![0.0; n_nodes],
        }
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn mean_rho(&self) -> &[f64] {
        &self.mean_rho
    }

    pub fn mean_phi(&self) -> &[f64] {
        &self.mean_phi
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Computes the slot's estimates. `ln t` is clamped to 0 for t <= 1, so
    /// the first slots carry no radius.
    pub fn snapshot_estimates(&self, t: u64, constants: &SystemConstants) -> Estimates {
        let n = self.counts.len();
        let ln_t = if t > 1 { (t as f64).ln() } else { 0.0 };
        let mut rho_hat = vec![0.0; n];
        let mut phi_hat = vec![0.0; n];
        for node in 0..n {
            let h = self.counts[node];
            if h == 0 {
                continue; // unvisited: maximal optimism
            }
            phi_hat[node] = self.estimate(
                self.mean_phi[node],
                self.sumsq_phi[node],
                h,
                ln_t,
                constants.phi_max,
            );
            if node != DEVICE {
                rho_hat[node] = self.estimate(
                    self.mean_rho[node],
                    self.sumsq_rho[node],
                    h,
                    ln_t,
                    constants.rho_max,
                );
            }
        }
        Estimates { rho_hat, phi_hat }
    }

    fn estimate(&self, mean: f64, sumsq: f64, h: u64, ln_t: f64, max: f64) -> f64 {
        let radius = match self.strategy {
            Strategy::Ucb1 => max * (3.0 * ln_t / (2.0 * h as f64)).sqrt(),
            Strategy::UcbTuned => {
                let hf = h as f64;
                // Sample variance of the normalized observations obs/max.
                let norm_mean = mean / max;
                let norm_var = (sumsq / (max * max)) / hf - norm_mean * norm_mean;
                let v = norm_var.max(0.0) + (2.0 * ln_t / hf).sqrt();
                max * ((ln_t / hf) * v.min(0.25)).sqrt()
            }
            Strategy::NoConfRadius | Strategy::EpsGreedy { .. } => 0.0,
        };
        (mean - radius).max(0.0)
    }

    /// Folds one slot's feedback into the counts and means using the
    /// batch-per-slot recurrences: with k_n new observations on node n,
    ///
    /// ```text
    /// h_n       <- h_n + k_n
    /// mean_n    <- (mean_n * h_old + sum of new observations) / h_n
    /// ```
    ///
    /// Offloaded tasks contribute a 1/R observation to the assigned fog
    /// node; every task contributes a 1/F observation to its node.
    pub fn record(
        &mut self,
        ctx: &SlotContext,
        decision: &Decision,
        feedback: &Feedback,
    ) -> Result<(), LearnerError> {
        let n = self.counts.len();
        let mut new_count = vec![0u64; n];
        let mut sum_rho = vec![0.0; n];
        let mut sum_phi = vec![0.0; n];
        let mut add_sq_rho = vec![0.0; n];
        let mut add_sq_phi = vec![0.0; n];

        for task in &ctx.tasks {
            let node = decision
                .node_for(task.id)
                .ok_or(LearnerError::Mismatch { task: task.id, reason: "no assignment" })?;
            if node >= n {
                return Err(LearnerError::Mismatch { task: task.id, reason: "node out of range" });
            }
            let fb = feedback
                .per_task
                .get(&task.id)
                .ok_or(LearnerError::Mismatch { task: task.id, reason: "no feedback" })?;
            match (node == DEVICE, fb.rate) {
                (false, Some(rate)) => {
                    let obs = 1.0 / rate;
                    sum_rho[node] += obs;
                    add_sq_rho[node] += obs * obs;
                }
                (true, None) => {}
                (false, None) => {
                    return Err(LearnerError::Mismatch {
                        task: task.id,
                        reason: "offloaded task without a rate observation",
                    })
                }
                (true, Some(_)) => {
                    return Err(LearnerError::Mismatch {
                        task: task.id,
                        reason: "local task with a rate observation",
                    })
                }
            }
            let obs = 1.0 / fb.freq;
            sum_phi[node] += obs;
            add_sq_phi[node] += obs * obs;
            new_count[node] += 1;
        }

        for node in 0..n {
            let k = new_count[node];
            if k == 0 {
                continue;
            }
            let h_old = self.counts[node] as f64;
            let h_new = h_old + k as f64;
            self.mean_phi[node] = (self.mean_phi[node] * h_old + sum_phi[node]) / h_new;
            self.sumsq_phi[node] += add_sq_phi[node];
            if node != DEVICE {
                self.mean_rho[node] = (self.mean_rho[node] * h_old + sum_rho[node]) / h_new;
                self.sumsq_rho[node] += add_sq_rho[node];
            }
            self.counts[node] += k;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LearnerError {
    #[error("task {task}: inconsistent decision/feedback pairing ({reason})")]
    Mismatch { task: crate::model::TaskId, reason: &'static str },
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::model::{NodeId, Task, TaskId};
    use crate::testutil::{assert_rel, vi_constants};

    fn unit_constants() -> SystemConstants {
        // rho_max = phi_max = 1 for hand-computed radius checks.
        SystemConstants::derive(3, 8, 1e7, 1e10, 1.0, 1.0, 1e-6, 1.5e-8).unwrap()
    }

    fn state_with(phi_mean: f64, count: u64, strategy: Strategy) -> LearnerState {
        let mut s = LearnerState::new(4, strategy);
        s.counts[1] = count;
        s.mean_phi[1] = phi_mean;
        // A consistent sum of squares for constant observations.
        s.sumsq_phi[1] = phi_mean * phi_mean * count as f64;
        s
    }

    #[test]
    fn radius_is_zero_at_t_one() {
        let s = state_with(0.4, 5, Strategy::Ucb1);
        let est = s.snapshot_estimates(1, &unit_constants());
        assert_eq!(est.phi_hat[1], 0.4);
    }

    #[test]
    fn ucb1_radius_hand_example() {
        // mean 0.5, max 1.0, h = 50, t = 100:
        // radius = sqrt(3 ln 100 / 100) = 0.3716922188849839.
        let s = state_with(0.5, 50, Strategy::Ucb1);
        let est = s.snapshot_estimates(100, &unit_constants());
        assert_rel(est.phi_hat[1], 0.12830778111501612, 1e-9);
    }

    #[test]
    fn ucb1_clamps_to_zero_when_radius_exceeds_mean() {
        // mean 0.1, h = 2, t = 100: radius = sqrt(3 ln 100 / 4) ~ 1.8585.
        let s = state_with(0.1, 2, Strategy::Ucb1);
        let est = s.snapshot_estimates(100, &unit_constants());
        assert_eq!(est.phi_hat[1], 0.0);
    }

    #[test]
    fn unvisited_nodes_keep_estimate_zero() {
        let s = state_with(0.5, 50, Strategy::Ucb1);
        let est = s.snapshot_estimates(100, &unit_constants());
        assert_eq!(est.phi_hat[2], 0.0);
        assert_eq!(est.rho_hat[2], 0.0);
    }

    #[test]
    fn no_conf_radius_returns_exact_means() {
        let s = state_with(0.37, 9, Strategy::NoConfRadius);
        let est = s.snapshot_estimates(1000, &unit_constants());
        assert_eq!(est.phi_hat[1], 0.37);
        let s = state_with(0.37, 9, Strategy::EpsGreedy { epsilon: 0.1 });
        let est = s.snapshot_estimates(1000, &unit_constants());
        assert_eq!(est.phi_hat[1], 0.37);
    }

    #[test]
    fn ucb_tuned_radius_matches_hand_formula() {
        // Two observations 0.2 and 0.4 on node 1: mean 0.3, sumsq 0.2.
        let mut s = LearnerState::new(4, Strategy::UcbTuned);
        s.counts[1] = 2;
        s.mean_phi[1] = 0.3;
        s.sumsq_phi[1] = 0.2;
        let t = 50u64;
        let ln_t = (t as f64).ln();
        let var = 0.2 / 2.0 - 0.09; // 0.01
        let v = var + (2.0 * ln_t / 2.0).sqrt();
        let radius = ((ln_t / 2.0) * v.min(0.25)).sqrt();
        let est = s.snapshot_estimates(t, &unit_constants());
        assert_rel(est.phi_hat[1], (0.3f64 - radius).max(0.0), 1e-12);
    }

    #[test]
    fn estimate_nondecreasing_in_counts() {
        let constants = unit_constants();
        let mut prev = 0.0;
        for h in [1u64, 2, 5, 10, 50, 200, 1000] {
            let s = state_with(0.5, h, Strategy::Ucb1);
            let est = s.snapshot_estimates(1000, &constants);
            assert!(est.phi_hat[1] >= prev, "h = {h}");
            prev = est.phi_hat[1];
        }
    }

    fn slot_with_one_task(node: NodeId, rate: Option<f64>, freq: f64) -> (SlotContext, Decision, Feedback) {
        let id = TaskId { slot: 0, ordinal: 0 };
        let ctx = SlotContext {
            t: 0,
            tasks: vec![Task::new(id, 1e6, 1e9).unwrap()],
            accessible: if node == 0 { vec![0] } else { vec![0, node] },
            eta: if node == 0 {
                BTreeMap::new()
            } else {
                BTreeMap::from([(node, 5e-7)])
            },
            kappa: if node == 0 {
                BTreeMap::from([(0, 2e-10)])
            } else {
                BTreeMap::from([(0, 2e-10), (node, 1e-8)])
            },
        };
        let decision = Decision { assignments: BTreeMap::from([(id, node)]) };
        let feedback = Feedback {
            per_task: BTreeMap::from([(
                id,
                TaskFeedbackFor { rate, freq }.build(&ctx.tasks[0], node),
            )]),
        };
        (ctx, decision, feedback)
    }

    struct TaskFeedbackFor {
        rate: Option<f64>,
        freq: f64,
    }

    impl TaskFeedbackFor {
        fn build(&self, task: &Task, node: NodeId) -> crate::model::TaskFeedback {
            crate::model::TaskFeedback {
                rate: self.rate,
                freq: self.freq,
                d_tr: self.rate.map_or(0.0, |r| task.size_bits / r),
                d_pr: task.work_cycles / self.freq,
            }
        }
    }

    #[test]
    fn recurrence_hand_example() {
        // mean_phi = 0.5 at h = 4; one observation 1/F = 0.7 gives
        // (0.5*4 + 0.7)/5 = 0.54.
        let mut s = LearnerState::new(4, Strategy::Ucb1);
        s.counts[1] = 4;
        s.mean_phi[1] = 0.5;
        let (ctx, d, fb) = slot_with_one_task(1, Some(1e7), 1.0 / 0.7);
        s.record(&ctx, &d, &fb).unwrap();
        assert_eq!(s.counts[1], 5);
        assert_rel(s.mean_phi[1], 0.54, 1e-9);
    }

    #[test]
    fn node_without_tasks_is_untouched() {
        let mut s = LearnerState::new(4, Strategy::Ucb1);
        s.counts[2] = 7;
        s.mean_phi[2] = 0.25;
        let (ctx, d, fb) = slot_with_one_task(1, Some(1e7), 1e10);
        s.record(&ctx, &d, &fb).unwrap();
        assert_eq!(s.counts[2], 7);
        assert_eq!(s.mean_phi[2], 0.25);
    }

    #[test]
    fn local_task_leaves_rho_untouched() {
        let mut s = LearnerState::new(4, Strategy::Ucb1);
        let (ctx, d, fb) = slot_with_one_task(0, None, 1e10);
        s.record(&ctx, &d, &fb).unwrap();
        assert_eq!(s.counts[0], 1);
        assert!(s.mean_rho.iter().all(|&x| x == 0.0));
        assert_rel(s.mean_phi[0], 1e-10, 1e-12);
    }

    #[test]
    fn mismatched_feedback_is_rejected() {
        let mut s = LearnerState::new(4, Strategy::Ucb1);
        let (ctx, d, mut fb) = slot_with_one_task(1, Some(1e7), 1e10);
        fb.per_task.clear();
        assert!(s.record(&ctx, &d, &fb).is_err());
        // Offloaded task whose feedback lacks a rate.
        let (ctx, d, mut fb) = slot_with_one_task(1, Some(1e7), 1e10);
        for (_, f) in fb.per_task.iter_mut() {
            f.rate = None;
        }
        assert!(s.record(&ctx, &d, &fb).is_err());
    }

    #[test]
    fn incremental_mean_matches_batch_average_over_many_updates() {
        // 1e5 single-observation slots; the recurrence must stay within 1e-9
        // relative error of the direct average.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        let mut s = LearnerState::new(2, Strategy::Ucb1);
        let mut observations = Vec::new();
        for slot in 0..100_000u64 {
            let freq = rng.gen_range(1e9..2e10);
            observations.push(1.0 / freq);
            let id = TaskId { slot, ordinal: 0 };
            let ctx = SlotContext {
                t: slot,
                tasks: vec![Task::new(id, 1e6, 1e9).unwrap()],
                accessible: vec![0, 1],
                eta: BTreeMap::from([(1, 5e-7)]),
                kappa: BTreeMap::from([(0, 2e-10), (1, 1e-8)]),
            };
            let d = Decision { assignments: BTreeMap::from([(id, 1)]) };
            let fb = Feedback {
                per_task: BTreeMap::from([(
                    id,
                    crate::model::TaskFeedback {
                        rate: Some(1e7),
                        freq,
                        d_tr: 1e6 / 1e7,
                        d_pr: 1e9 / freq,
                    },
                )]),
            };
            s.record(&ctx, &d, &fb).unwrap();
        }
        let direct = observations.iter().sum::<f64>() / observations.len() as f64;
        assert_rel(s.mean_phi[1], direct, 1e-9);
        assert_eq!(s.counts[1], 100_000);
    }

    #[test]
    fn round_robin_means_converge_to_true_means() {
        // Stationary environment, forced round-robin over all nodes for 1e5
        // slots: every empirical mean lands within 3*phi_max/sqrt(h) of the
        // closed-form mean.
        use crate::environment::{
            ArrivalSpec, CoefficientMode, EnvParams, Environment, MetaProfiles, TaskSizeDist,
        };
        let constants = vi_constants();
        let params = EnvParams {
            arrivals: ArrivalSpec::Fixed(10),
            task_size: TaskSizeDist::LogUniform { low: 5e3, high: 5e5 },
            cycles_per_bit: 1000.0,
            subset_size: 20,
            coefficient_mode: CoefficientMode::PerSlot,
        };
        let mut env =
            Environment::build_sampled(&MetaProfiles::default(), constants.clone(), params, 77)
                .unwrap();
        let mut s = LearnerState::new(constants.n_nodes(), Strategy::Ucb1);
        let n_nodes = constants.n_nodes();
        let horizon = 100_000u64;
        for t in 0..horizon {
            let ctx = env.next_slot(t).unwrap();
            let assignments = ctx
                .tasks
                .iter()
                .enumerate()
                .map(|(i, task)| {
                    (task.id, ((t as usize * ctx.tasks.len() + i) % n_nodes) as NodeId)
                })
                .collect();
            let d = Decision { assignments };
            let fb = env.realize(&ctx, &d).unwrap();
            s.record(&ctx, &d, &fb).unwrap();
        }
        let means = env.true_means();
        assert_eq!(s.total_count(), horizon * 10);
        for node in 0..n_nodes {
            let h = s.counts[node] as f64;
            assert!(h > 0.0);
            let tol = 3.0 * constants.phi_max / h.sqrt();
            let err = (s.mean_phi[node] - means.phi[&node]).abs();
            assert!(err < tol, "node {node}: |{err}| >= {tol}");
            if node != DEVICE {
                let tol = 3.0 * constants.rho_max / h.sqrt();
                let err = (s.mean_rho[node] - means.rho[&node]).abs();
                assert!(err < tol, "node {node} rho: |{err}| >= {tol}");
            }
        }
    }
}
