//! Orchestrates one simulation run. Every slot executes three phases in
//! order: snapshot the optimistic estimates, select nodes and account
//! energy/queues, then fold the end-of-slot feedback into the learner.
//! Estimates used in slot t therefore never include slot-t observations.
//!
//! Each slot emits a [`SlotTrace`] carrying the full per-task and per-node
//! detail plus a hash of the estimate snapshot for reproducibility audits.
//! The regret fields are left at zero here; the metrics layer fills them
//! (the engine never sees the hidden true means).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::{self, ControlError, EnergyLedger, QueueState};
use crate::environment::{EnvError, EnvState, Environment};
use crate::learner::{Estimates, LearnerError, LearnerState, Strategy};
use crate::model::{NodeId, DEVICE};

/// Sub-stream id for the policy's exploration coins (the environment owns
/// streams 0..=5).
const STREAM_POLICY: u64 = 6;

/// Per-task outcome of one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub ordinal: u32,
    pub size_bits: f64,
    pub work_cycles: f64,
    pub node: NodeId,
    /// Realized transmission rate; `None` for local processing.
    pub rate: Option<f64>,
    pub freq: f64,
    pub d_tr: f64,
    pub d_pr: f64,
}

impl TaskRecord {
    pub fn latency(&self) -> f64 {
        self.d_tr + self.d_pr
    }
}

/// Per-node outcome of one slot, including a learner state dump (counts and
/// means after the slot's update; estimates as snapshotted for the slot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node: NodeId,
    pub accessible: bool,
    /// J/bit this slot; `None` for the device or inaccessible nodes.
    pub eta: Option<f64>,
    /// J/cycle this slot; `None` for inaccessible nodes.
    pub kappa: Option<f64>,
    pub energy: f64,
    /// Backlog after this slot's queue update.
    pub backlog_after: f64,
    pub count: u64,
    pub mean_rho: f64,
    pub mean_phi: f64,
    pub rho_hat: f64,
    pub phi_hat: f64,
}

/// Everything observable about one executed slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace {
    pub t: u64,
    pub tasks: Vec<TaskRecord>,
    pub nodes: Vec<NodeRecord>,
    /// Realized total latency of the slot, seconds.
    pub latency: f64,
    /// First 8 bytes of the SHA-256 over the slot's estimate snapshot.
    pub estimate_hash: u64,
    /// Expected slot latency of the decisions (true means); metrics fills.
    pub expected_latency: f64,
    /// Clairvoyant baseline for the slot; metrics fills.
    pub dstar: f64,
    /// Slot increments of the two regret series; metrics fills.
    pub regret_inc_expected: f64,
    pub regret_inc_realized: f64,
}

impl SlotTrace {
    pub fn total_energy(&self) -> f64 {
        self.nodes.iter().map(|n| n.energy).sum()
    }

    pub fn total_backlog(&self) -> f64 {
        self.nodes.iter().map(|n| n.backlog_after).sum()
    }

    pub fn accessible_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().filter(|n| n.accessible).map(|n| n.node)
    }
}

fn hash_estimates(est: &Estimates) -> u64 {
    let mut hasher = Sha256::new();
    for x in est.rho_hat.iter().chain(est.phi_hat.iter()) {
        hasher.update(x.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Serializable snapshot of a run's mutable state, allowing a sweep to
/// extend a horizon without replaying.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSnapshot {
    pub t: u64,
    pub v: f64,
    pub seed: u64,
    pub env: EnvState,
    pub learner: LearnerState,
    pub queues: QueueState,
    pub ledger: EnergyLedger,
    pub policy_word_pos: u128,
}

/// One run of the scheme over its exclusively owned environment and states.
#[derive(Debug)]
pub struct Simulation {
    env: Environment,
    learner: LearnerState,
    queues: QueueState,
    ledger: EnergyLedger,
    policy_rng: ChaCha12Rng,
    v: f64,
    seed: u64,
    t: u64,
}

impl Simulation {
    /// Fresh states: zero counts, zero means, empty queues.
    pub fn new(env: Environment, strategy: Strategy, v: f64, seed: u64) -> Result<Self, EngineError> {
        let n_nodes = env.constants().n_nodes();
        let queues = QueueState::new(env.budgets())?;
        let mut policy_rng = ChaCha12Rng::seed_from_u64(seed);
        policy_rng.set_stream(STREAM_POLICY);
        Ok(Self {
            learner: LearnerState::new(n_nodes, strategy),
            queues,
            ledger: EnergyLedger::new(n_nodes),
            policy_rng,
            v,
            seed,
            t: env.next_t(),
            env,
        })
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn learner(&self) -> &LearnerState {
        &self.learner
    }

    pub fn queues(&self) -> &QueueState {
        &self.queues
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    /// Executes one slot and returns its trace.
    pub fn step(&mut self) -> Result<SlotTrace, EngineError> {
        let t = self.t;
        let ctx = self.env.next_slot(t).map_err(|e| EngineError::at(t, e))?;

        // Phase 1: online learning snapshot.
        let estimates = self.learner.snapshot_estimates(t, self.env.constants());
        let estimate_hash = hash_estimates(&estimates);

        // Phase 2: offloading decisions, energy accounting, queue update.
        let decision = controller::select(
            &ctx,
            &self.queues,
            &estimates,
            self.v,
            self.learner.strategy(),
            &mut self.policy_rng,
        )
        .map_err(|e| EngineError::at(t, e))?;
        let feedback = self.env.realize(&ctx, &decision).map_err(|e| EngineError::at(t, e))?;
        let energies = controller::slot_energy(&ctx, &decision).map_err(|e| EngineError::at(t, e))?;
        self.ledger.record(&padded(&energies, self.queues.n_nodes()));
        controller::update_queues(&mut self.queues, &energies).map_err(|e| EngineError::at(t, e))?;

        // Phase 3: counts and empirical means.
        self.learner
            .record(&ctx, &decision, &feedback)
            .map_err(|e| EngineError::at(t, e))?;

        let mut latency = 0.0;
        let tasks: Vec<TaskRecord> = ctx
            .tasks
            .iter()
            .map(|task| {
                let node = decision.node_for(task.id).expect("decision validated");
                let fb = feedback.per_task[&task.id];
                latency += fb.latency();
                TaskRecord {
                    ordinal: task.id.ordinal,
                    size_bits: task.size_bits,
                    work_cycles: task.work_cycles,
                    node,
                    rate: fb.rate,
                    freq: fb.freq,
                    d_tr: fb.d_tr,
                    d_pr: fb.d_pr,
                }
            })
            .collect();

        let n_nodes = self.queues.n_nodes();
        let nodes: Vec<NodeRecord> = (0..n_nodes)
            .map(|node| NodeRecord {
                node,
                accessible: ctx.is_accessible(node),
                eta: ctx.eta.get(&node).copied(),
                kappa: ctx.kappa.get(&node).copied(),
                energy: energies.get(node).copied().unwrap_or(0.0),
                backlog_after: self.queues.backlog()[node],
                count: self.learner.counts()[node],
                mean_rho: if node == DEVICE { 0.0 } else { self.learner.mean_rho()[node] },
                mean_phi: self.learner.mean_phi()[node],
                rho_hat: estimates.rho_hat[node],
                phi_hat: estimates.phi_hat[node],
            })
            .collect();

        self.t += 1;
        Ok(SlotTrace {
            t,
            tasks,
            nodes,
            latency,
            estimate_hash,
            expected_latency: 0.0,
            dstar: 0.0,
            regret_inc_expected: 0.0,
            regret_inc_realized: 0.0,
        })
    }

    /// Runs `horizon` slots, handing each trace to the sink.
    pub fn run_with(
        &mut self,
        horizon: u64,
        mut on_slot: impl FnMut(&mut SlotTrace),
    ) -> Result<(), EngineError> {
        for _ in 0..horizon {
            let mut trace = self.step()?;
            on_slot(&mut trace);
        }
        Ok(())
    }

    /// Runs `horizon` slots and collects the traces (desk scale only).
    pub fn run_collect(&mut self, horizon: u64) -> Result<Vec<SlotTrace>, EngineError> {
        let mut out = Vec::with_capacity(horizon.min(1 << 20) as usize);
        self.run_with(horizon, |tr| out.push(tr.clone()))?;
        Ok(out)
    }

    /// Serializable state for later resume.
    pub fn snapshot(&self) -> SimSnapshot {
        SimSnapshot {
            t: self.t,
            v: self.v,
            seed: self.seed,
            env: self.env.state(),
            learner: self.learner.clone(),
            queues: self.queues.clone(),
            ledger: self.ledger.clone(),
            policy_word_pos: self.policy_rng.get_word_pos(),
        }
    }

    /// Rebuilds a run from a snapshot plus the environment's build inputs
    /// (profiles, constants, params must match the original run).
    pub fn resume(env_template: Environment, snap: SimSnapshot) -> Result<Self, EngineError> {
        let env = Environment::restore(
            env_template.profiles().to_vec(),
            env_template.constants().clone(),
            env_template.params().clone(),
            snap.seed,
            &snap.env,
        )
        .map_err(|e| EngineError::at(snap.t, e))?;
        let mut policy_rng = ChaCha12Rng::seed_from_u64(snap.seed);
        policy_rng.set_stream(STREAM_POLICY);
        policy_rng.set_word_pos(snap.policy_word_pos);
        Ok(Self {
            env,
            learner: snap.learner,
            queues: snap.queues,
            ledger: snap.ledger,
            policy_rng,
            v: snap.v,
            seed: snap.seed,
            t: snap.t,
        })
    }
}

fn padded(energies: &[f64], n_nodes: usize) -> Vec<f64> {
    let mut out = vec![0.0; n_nodes];
    out[..energies.len()].copy_from_slice(energies);
    out
}

#[derive(Debug, thiserror::Error)]
#[error("slot {t}: {source}")]
pub struct EngineError {
    pub t: u64,
    #[source]
    pub source: Box<dyn std::error::Error + Send + Sync + 'static>,
}

impl EngineError {
    fn at(t: u64, e: impl std::error::Error + Send + Sync + 'static) -> Self {
        Self { t, source: Box::new(e) }
    }
}

impl From<ControlError> for EngineError {
    fn from(e: ControlError) -> Self {
        Self::at(0, e)
    }
}

impl From<EnvError> for EngineError {
    fn from(e: EnvError) -> Self {
        Self::at(0, e)
    }
}

impl From<LearnerError> for EngineError {
    fn from(e: LearnerError) -> Self {
        Self::at(0, e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{
        ArrivalSpec, CoefficientMode, EnvParams, Environment, MetaProfiles, NodeProfile, Support,
        TaskSizeDist,
    };
    use crate::model::SystemConstants;
    use crate::testutil::vi_constants;

    fn scaled_params() -> EnvParams {
        EnvParams {
            arrivals: ArrivalSpec::Fixed(10),
            task_size: TaskSizeDist::LogUniform { low: 5e3, high: 5e5 },
            cycles_per_bit: 1000.0,
            subset_size: 10,
            coefficient_mode: CoefficientMode::PerSlot,
        }
    }

    fn vi_sim(seed: u64, v: f64) -> Simulation {
        let env = Environment::build_sampled(
            &MetaProfiles::default(),
            vi_constants(),
            scaled_params(),
            seed,
        )
        .unwrap();
        Simulation::new(env, Strategy::Ucb1, v, seed).unwrap()
    }

    #[test]
    fn zero_horizon_leaves_states_untouched() {
        let mut sim = vi_sim(1, 100.0);
        let before = sim.learner().clone();
        sim.run_with(0, |_| panic!("no slots expected")).unwrap();
        assert_eq!(sim.t(), 0);
        assert_eq!(*sim.learner(), before);
        assert_eq!(sim.queues().total_backlog(), 0.0);
    }

    #[test]
    fn device_only_system_assigns_everything_locally() {
        // subset_size 0: the accessible set is the singleton {0} every slot.
        let constants = SystemConstants::derive(1, 10, 1e7, 1e10, 5e6, 1e9, 1e-6, 1.5e-8).unwrap();
        let profiles = vec![
            NodeProfile {
                node: 0,
                rate: None,
                freq: Support::new(1e9, 1e10).unwrap(),
                eta: None,
                kappa: Support::new(1e-10, 5e-10).unwrap(),
                budget: 0.5,
            },
            NodeProfile {
                node: 1,
                rate: Some(Support::new(1e7, 1e8).unwrap()),
                freq: Support::new(5e9, 1.5e10).unwrap(),
                eta: Some(Support::new(1e-7, 1e-6).unwrap()),
                kappa: Support::new(5e-9, 1.5e-8).unwrap(),
                budget: 0.5,
            },
        ];
        let params = EnvParams {
            arrivals: ArrivalSpec::Fixed(10),
            task_size: TaskSizeDist::Fixed(1e5),
            cycles_per_bit: 1000.0,
            subset_size: 0,
            coefficient_mode: CoefficientMode::PerSlot,
        };
        let env = Environment::build(profiles, constants, params, 11).unwrap();
        let mut sim = Simulation::new(env, Strategy::Ucb1, 100.0, 11).unwrap();
        let tr = sim.step().unwrap();
        assert!(tr.tasks.iter().all(|t| t.node == 0));
        assert_eq!(sim.learner().counts()[0], 10);
        assert_eq!(sim.learner().counts()[1], 0);
    }

    #[test]
    fn identical_seeds_give_identical_traces() {
        let mut a = vi_sim(42, 100.0);
        let mut b = vi_sim(42, 100.0);
        let ta = a.run_collect(1000).unwrap();
        let tb = b.run_collect(1000).unwrap();
        assert_eq!(ta, tb);
    }

    #[test]
    fn different_seeds_give_different_traces() {
        let mut a = vi_sim(1, 100.0);
        let mut b = vi_sim(2, 100.0);
        let ta = a.run_collect(50).unwrap();
        let tb = b.run_collect(50).unwrap();
        assert_ne!(ta, tb);
    }

    #[test]
    fn count_conservation_over_run() {
        let mut sim = vi_sim(7, 100.0);
        let mut total_tasks = 0u64;
        sim.run_with(500, |tr| total_tasks += tr.tasks.len() as u64)
            .unwrap();
        assert_eq!(sim.learner().total_count(), total_tasks);
        assert_eq!(total_tasks, 500 * 10);
    }

    #[test]
    fn estimates_never_include_same_slot_feedback() {
        // A fog node with a latency far worse than the device still receives
        // traffic the first time it is priced, because its estimate is the
        // optimistic 0 until its first feedback arrives.
        let constants = SystemConstants::derive(1, 2, 1e7, 1e10, 1e3, 1e6, 1e-6, 1.5e-8).unwrap();
        let profiles = vec![
            NodeProfile {
                node: 0,
                rate: None,
                freq: Support::point(1e10).unwrap(),
                eta: None,
                kappa: Support::point(2e-10).unwrap(),
                budget: 0.5,
            },
            NodeProfile {
                node: 1,
                // Terrible: 1e3 bits/s transmission, slow CPU.
                rate: Some(Support::point(1e3).unwrap()),
                freq: Support::point(1e6).unwrap(),
                eta: Some(Support::point(1e-7).unwrap()),
                kappa: Support::point(1e-8).unwrap(),
                budget: 0.5,
            },
        ];
        let params = EnvParams {
            arrivals: ArrivalSpec::Fixed(1),
            task_size: TaskSizeDist::Fixed(1e4),
            cycles_per_bit: 100.0,
            subset_size: 1,
            coefficient_mode: CoefficientMode::PerSlot,
        };
        let env = Environment::build(profiles, constants, params, 3).unwrap();
        let mut sim = Simulation::new(env, Strategy::Ucb1, 100.0, 3).unwrap();

        // Slot 0: all zero prices, tie-break to the device.
        let t0 = sim.step().unwrap();
        assert_eq!(t0.tasks[0].node, 0);
        // Slot 1: the device now carries a positive estimate and backlog
        // while node 1 still has estimate 0, so node 1 wins despite being
        // terrible. Its estimate snapshot for the slot must still be 0.
        let t1 = sim.step().unwrap();
        assert_eq!(t1.tasks[0].node, 1);
        assert_eq!(t1.nodes[1].phi_hat, 0.0);
        assert_eq!(t1.nodes[1].rho_hat, 0.0);
        // After the slot, the recorded means reflect the terrible feedback.
        assert!(t1.nodes[1].mean_phi > 0.0);
        // Slot 2: with its estimates now learned, node 1 is avoided.
        let t2 = sim.step().unwrap();
        assert_eq!(t2.tasks[0].node, 0);
    }

    #[test]
    fn trace_energy_matches_queue_increment() {
        let mut sim = vi_sim(13, 100.0);
        let mut prev_backlog: Option<Vec<f64>> = None;
        sim.run_with(200, |tr| {
            if let Some(prev) = &prev_backlog {
                for rec in &tr.nodes {
                    let drained = (prev[rec.node] - 0.5f64).max(0.0);
                    let diff = rec.backlog_after - drained;
                    assert!((diff - rec.energy).abs() < 1e-12);
                }
            }
            prev_backlog = Some(tr.nodes.iter().map(|n| n.backlog_after).collect());
        })
        .unwrap();
    }

    #[test]
    fn snapshot_resume_continues_identically() {
        let mut reference = vi_sim(21, 100.0);
        let full = reference.run_collect(300).unwrap();

        let mut first = vi_sim(21, 100.0);
        first.run_collect(150).unwrap();
        let snap = first.snapshot();
        // Resume from a freshly built environment template plus the snapshot.
        let template = Environment::build_sampled(
            &MetaProfiles::default(),
            vi_constants(),
            scaled_params(),
            21,
        )
        .unwrap();
        let mut resumed = Simulation::resume(template, snap).unwrap();
        let rest = resumed.run_collect(150).unwrap();
        assert_eq!(&full[150..], &rest[..]);
    }

    #[test]
    fn snapshot_roundtrips_through_serde() {
        let mut sim = vi_sim(5, 50.0);
        sim.run_collect(10).unwrap();
        let snap = sim.snapshot();
        let json = serde_json::to_string(&snap).unwrap();
        let back: SimSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(snap, back);
    }

    #[test]
    fn per_slot_cost_scales_roughly_linearly_in_n_times_a() {
        // Selection dominates at O(N * a_max) per slot. Compare per-slot
        // wall time at 16x the work; a quadratic blowup would far exceed the
        // generous allowance.
        fn per_slot_nanos(n_fog: usize, n_tasks: u32, slots: u64) -> f64 {
            let constants =
                SystemConstants::derive(n_fog, n_tasks, 1e7, 1e10, 5e6, 1e9, 1e-6, 1.5e-8).unwrap();
            let params = EnvParams {
                arrivals: ArrivalSpec::Fixed(n_tasks),
                task_size: TaskSizeDist::LogUniform { low: 5e3, high: 5e5 },
                cycles_per_bit: 1000.0,
                subset_size: n_fog as u32,
                coefficient_mode: CoefficientMode::PerSlot,
            };
            let env =
                Environment::build_sampled(&MetaProfiles::default(), constants, params, 3).unwrap();
            let mut sim = Simulation::new(env, Strategy::Ucb1, 100.0, 3).unwrap();
            sim.run_collect(slots / 10).unwrap(); // warmup
            let start = std::time::Instant::now();
            sim.run_with(slots, |_| {}).unwrap();
            start.elapsed().as_nanos() as f64 / slots as f64
        }
        let small = per_slot_nanos(8, 4, 2000);
        let large = per_slot_nanos(32, 16, 2000);
        let work_ratio = (32.0 * 16.0) / (8.0 * 4.0); // 16x
        assert!(
            large / small < work_ratio * 8.0,
            "per-slot cost ratio {} vs work ratio {work_ratio}",
            large / small
        );
    }
}
