//! Domain types shared by every other module: tasks, system-wide constants,
//! per-slot observable context, offloading decisions, and end-of-slot feedback.
//!
//! Conventions used throughout the crate:
//! - Node 0 is always the IoT device; fog nodes are 1..=N.
//! - All physical quantities are SI base units (bits, CPU cycles, seconds,
//!   joules) stored as `f64`. The paper-scale mix of 1e-10 J/cycle and 1e8
//!   bits/s makes a single unit system the only sane choice.
//! - Task ids are (slot, ordinal) pairs; uniqueness within a slot is all the
//!   scheme ever needs.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Index into the node set {0, 1, ..., N}. Node 0 is the IoT device.
pub type NodeId = usize;

/// The IoT device's node id.
pub const DEVICE: NodeId = 0;

/// Identifies a task within a run: the slot it arrived in plus its position
/// in that slot's arrival list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId {
    pub slot: u64,
    pub ordinal: u32,
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.slot, self.ordinal)
    }
}

/// One unit of work: `size_bits` to transmit (if offloaded) and
/// `work_cycles` of CPU demand wherever it runs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub size_bits: f64,
    pub work_cycles: f64,
}

impl Task {
    pub fn new(id: TaskId, size_bits: f64, work_cycles: f64) -> Result<Self, ModelError> {
        if !(size_bits > 0.0) || !size_bits.is_finite() {
            return Err(ModelError::InvalidTask {
                id,
                reason: format!("size_bits must be positive and finite, got {size_bits}"),
            });
        }
        if !(work_cycles > 0.0) || !work_cycles.is_finite() {
            return Err(ModelError::InvalidTask {
                id,
                reason: format!("work_cycles must be positive and finite, got {work_cycles}"),
            });
        }
        Ok(Self { id, size_bits, work_cycles })
    }
}

/// Global bounds of the system model. `rho_max` and `phi_max` are the
/// reciprocals of the rate/frequency floors and bound every realizable
/// observation of 1/R and 1/F.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConstants {
    /// Number of fog nodes N (the node set has N+1 members).
    pub n_fog: usize,
    /// Upper bound on arrivals per slot.
    pub a_max: u32,
    /// Upper bound on task size, bits.
    pub l_max: f64,
    /// Upper bound on task computation demand, cycles.
    pub w_max: f64,
    /// Lower bound on any realized transmission rate, bits/s.
    pub r_min: f64,
    /// Lower bound on any realized CPU frequency, cycles/s.
    pub f_min: f64,
    /// 1 / r_min, s/bit.
    pub rho_max: f64,
    /// 1 / f_min, s/cycle.
    pub phi_max: f64,
    /// Upper bound on per-bit transmission energy, J/bit.
    pub eta_max: f64,
    /// Upper bound on per-cycle processing energy, J/cycle.
    pub kappa_max: f64,
}

impl SystemConstants {
    /// Builds constants from the primitive bounds, deriving `rho_max` and
    /// `phi_max` exactly.
    pub fn derive(
        n_fog: usize,
        a_max: u32,
        l_max: f64,
        w_max: f64,
        r_min: f64,
        f_min: f64,
        eta_max: f64,
        kappa_max: f64,
    ) -> Result<Self, InvalidConfig> {
        let c = Self {
            n_fog,
            a_max,
            l_max,
            w_max,
            r_min,
            f_min,
            rho_max: 1.0 / r_min,
            phi_max: 1.0 / f_min,
            eta_max,
            kappa_max,
        };
        c.validate()?;
        Ok(c)
    }

    /// Total number of nodes including the device.
    pub fn n_nodes(&self) -> usize {
        self.n_fog + 1
    }

    /// Checks every invariant, reporting all violations rather than the
    /// first one found.
    pub fn validate(&self) -> Result<(), InvalidConfig> {
        let mut v = Violations::new();
        if self.n_fog == 0 {
            v.push("n_fog", "must be positive");
        }
        if self.a_max == 0 {
            v.push("a_max", "must be positive");
        }
        for (field, value) in [
            ("l_max", self.l_max),
            ("w_max", self.w_max),
            ("r_min", self.r_min),
            ("f_min", self.f_min),
            ("rho_max", self.rho_max),
            ("phi_max", self.phi_max),
            ("eta_max", self.eta_max),
            ("kappa_max", self.kappa_max),
        ] {
            if !(value > 0.0) || !value.is_finite() {
                v.push(field, format!("must be positive and finite, got {value}"));
            }
        }
        // rho_max*r_min and phi_max*f_min must equal 1 to within one ulp.
        if self.r_min > 0.0 && !within_one_ulp_of_one(self.rho_max * self.r_min) {
            v.push(
                "rho_max",
                format!(
                    "must equal 1/r_min = {}, got {}",
                    1.0 / self.r_min,
                    self.rho_max
                ),
            );
        }
        if self.f_min > 0.0 && !within_one_ulp_of_one(self.phi_max * self.f_min) {
            v.push(
                "phi_max",
                format!(
                    "must equal 1/f_min = {}, got {}",
                    1.0 / self.f_min,
                    self.phi_max
                ),
            );
        }
        v.into_result()
    }
}

fn within_one_ulp_of_one(x: f64) -> bool {
    (x - 1.0).abs() <= f64::EPSILON
}

/// Everything observable at the start of a slot: the arrivals, the
/// accessible node set (always containing the device), and the slot's
/// energy coefficients for accessible nodes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlotContext {
    pub t: u64,
    pub tasks: Vec<Task>,
    /// Sorted ascending; always contains node 0.
    pub accessible: Vec<NodeId>,
    /// J/bit for each accessible fog node (no entry for the device).
    pub eta: BTreeMap<NodeId, f64>,
    /// J/cycle for every accessible node.
    pub kappa: BTreeMap<NodeId, f64>,
}

impl SlotContext {
    pub fn is_accessible(&self, node: NodeId) -> bool {
        self.accessible.binary_search(&node).is_ok()
    }

    pub fn validate(&self, constants: &SystemConstants) -> Result<(), ModelError> {
        if !self.is_accessible(DEVICE) {
            return Err(ModelError::InvalidContext {
                t: self.t,
                reason: "accessible set must contain the device (node 0)".into(),
            });
        }
        if self.accessible.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::InvalidContext {
                t: self.t,
                reason: "accessible set must be strictly ascending".into(),
            });
        }
        if let Some(&n) = self.accessible.last() {
            if n > constants.n_fog {
                return Err(ModelError::InvalidContext {
                    t: self.t,
                    reason: format!("node {n} out of range (N = {})", constants.n_fog),
                });
            }
        }
        if self.tasks.len() > constants.a_max as usize {
            return Err(ModelError::InvalidContext {
                t: self.t,
                reason: format!(
                    "{} arrivals exceed a_max = {}",
                    self.tasks.len(),
                    constants.a_max
                ),
            });
        }
        for task in &self.tasks {
            if task.size_bits > constants.l_max {
                return Err(ModelError::InvalidTask {
                    id: task.id,
                    reason: format!("size_bits {} exceeds l_max {}", task.size_bits, constants.l_max),
                });
            }
            if task.work_cycles > constants.w_max {
                return Err(ModelError::InvalidTask {
                    id: task.id,
                    reason: format!(
                        "work_cycles {} exceeds w_max {}",
                        task.work_cycles, constants.w_max
                    ),
                });
            }
        }
        // eta defined exactly for accessible fog nodes; kappa for all
        // accessible nodes.
        for &n in &self.accessible {
            if n != DEVICE {
                match self.eta.get(&n) {
                    Some(&e) if e > 0.0 && e <= constants.eta_max => {}
                    Some(&e) => {
                        return Err(ModelError::InvalidContext {
                            t: self.t,
                            reason: format!("eta[{n}] = {e} outside (0, {}]", constants.eta_max),
                        })
                    }
                    None => {
                        return Err(ModelError::InvalidContext {
                            t: self.t,
                            reason: format!("missing eta for accessible fog node {n}"),
                        })
                    }
                }
            }
            match self.kappa.get(&n) {
                Some(&k) if k > 0.0 && k <= constants.kappa_max => {}
                Some(&k) => {
                    return Err(ModelError::InvalidContext {
                        t: self.t,
                        reason: format!("kappa[{n}] = {k} outside (0, {}]", constants.kappa_max),
                    })
                }
                None => {
                    return Err(ModelError::InvalidContext {
                        t: self.t,
                        reason: format!("missing kappa for accessible node {n}"),
                    })
                }
            }
        }
        if self.eta.keys().any(|n| !self.is_accessible(*n) || *n == DEVICE) {
            return Err(ModelError::InvalidContext {
                t: self.t,
                reason: "eta defined for a node outside the accessible fog set".into(),
            });
        }
        if self.kappa.keys().any(|n| !self.is_accessible(*n)) {
            return Err(ModelError::InvalidContext {
                t: self.t,
                reason: "kappa defined for an inaccessible node".into(),
            });
        }
        Ok(())
    }
}

/// One offloading decision per task in a slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub assignments: BTreeMap<TaskId, NodeId>,
}

impl Decision {
    pub fn node_for(&self, id: TaskId) -> Option<NodeId> {
        self.assignments.get(&id).copied()
    }

    /// Every task of the slot assigned exactly once, and only to accessible
    /// nodes.
    pub fn validate(&self, ctx: &SlotContext) -> Result<(), ModelError> {
        for task in &ctx.tasks {
            match self.assignments.get(&task.id) {
                None => return Err(ModelError::MissingAssignment { task: task.id }),
                Some(&n) if !ctx.is_accessible(n) => {
                    return Err(ModelError::NotAccessible { node: n, t: ctx.t })
                }
                Some(_) => {}
            }
        }
        if self.assignments.len() != ctx.tasks.len() {
            return Err(ModelError::InvalidContext {
                t: ctx.t,
                reason: format!(
                    "decision assigns {} tasks but the slot has {}",
                    self.assignments.len(),
                    ctx.tasks.len()
                ),
            });
        }
        Ok(())
    }
}

/// Realized transmission/processing outcome for one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskFeedback {
    /// Realized transmission rate, bits/s; `None` for locally processed tasks.
    pub rate: Option<f64>,
    /// Realized CPU frequency, cycles/s.
    pub freq: f64,
    /// Transmission latency, seconds (0 for local processing).
    pub d_tr: f64,
    /// Processing latency, seconds.
    pub d_pr: f64,
}

impl TaskFeedback {
    pub fn latency(&self) -> f64 {
        self.d_tr + self.d_pr
    }
}

/// End-of-slot feedback for every task of the slot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Feedback {
    pub per_task: BTreeMap<TaskId, TaskFeedback>,
}

/// A single config-field violation, kept separate so a validation pass can
/// report all of them at once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldViolation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Validation failure carrying every violated field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidConfig {
    pub violations: Vec<FieldViolation>,
}

impl fmt::Display for InvalidConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid configuration:")?;
        for v in &self.violations {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for InvalidConfig {}

/// Accumulator for field violations.
#[derive(Debug, Default)]
pub struct Violations(Vec<FieldViolation>);

impl Violations {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.0.push(FieldViolation {
            field: field.into(),
            message: message.into(),
        });
    }

    pub fn extend(&mut self, other: InvalidConfig) {
        self.0.extend(other.violations);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_result(self) -> Result<(), InvalidConfig> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(InvalidConfig { violations: self.0 })
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("task {id}: {reason}")]
    InvalidTask { id: TaskId, reason: String },
    #[error("slot {t}: {reason}")]
    InvalidContext { t: u64, reason: String },
    #[error("node {node} is not accessible in slot {t}")]
    NotAccessible { node: NodeId, t: u64 },
    #[error("no assignment for task {task}")]
    MissingAssignment { task: TaskId },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vi_defaults() -> SystemConstants {
        SystemConstants::derive(20, 10, 1e7, 1e10, 5e6, 1e9, 1e-6, 1.5e-8).unwrap()
    }

    #[test]
    fn vi_default_constants_are_valid() {
        let c = vi_defaults();
        assert_eq!(c.n_nodes(), 21);
        assert_eq!(c.rho_max, 2e-7);
        assert_eq!(c.phi_max, 1e-9);
    }

    #[test]
    fn zero_fog_count_is_rejected_with_field_name() {
        let err = SystemConstants::derive(0, 10, 1e7, 1e10, 5e6, 1e9, 1e-6, 1.5e-8).unwrap_err();
        assert!(err.violations.iter().any(|v| v.field == "n_fog"));
    }

    #[test]
    fn inconsistent_rho_max_is_rejected() {
        // 1/5e6 = 2e-7, not 1e-7.
        let mut c = vi_defaults();
        c.rho_max = 1e-7;
        let err = c.validate().unwrap_err();
        assert!(err.violations.iter().any(|v| v.field == "rho_max"));
        assert_eq!(err.violations.len(), 1);
    }

    #[test]
    fn validation_reports_every_violation() {
        let c = SystemConstants {
            n_fog: 0,
            a_max: 0,
            l_max: -1.0,
            w_max: 1e10,
            r_min: 5e6,
            f_min: 1e9,
            rho_max: 2e-7,
            phi_max: 1e-9,
            eta_max: 1e-6,
            kappa_max: 1.5e-8,
        };
        let err = c.validate().unwrap_err();
        assert_eq!(err.violations.len(), 3);
    }

    #[test]
    fn reciprocal_identities_hold_to_one_ulp() {
        for r_min in [5e6, 1e7, 3.3e7, 7.77e8] {
            let c = SystemConstants::derive(4, 3, 1e6, 1e9, r_min, 1e9, 1e-6, 1e-8).unwrap();
            assert!((c.rho_max * c.r_min - 1.0).abs() <= f64::EPSILON);
            assert!((c.phi_max * c.f_min - 1.0).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn task_rejects_nonpositive_fields() {
        let id = TaskId { slot: 0, ordinal: 0 };
        assert!(Task::new(id, 0.0, 1.0).is_err());
        assert!(Task::new(id, 1.0, -1.0).is_err());
        assert!(Task::new(id, f64::NAN, 1.0).is_err());
        assert!(Task::new(id, 1e6, 1e9).is_ok());
    }

    fn tiny_ctx() -> (SystemConstants, SlotContext) {
        let c = SystemConstants::derive(2, 3, 1e7, 1e10, 5e6, 1e9, 1e-6, 1.5e-8).unwrap();
        let t0 = Task::new(TaskId { slot: 0, ordinal: 0 }, 1e6, 1e9).unwrap();
        let ctx = SlotContext {
            t: 0,
            tasks: vec![t0],
            accessible: vec![0, 2],
            eta: BTreeMap::from([(2, 5e-7)]),
            kappa: BTreeMap::from([(0, 2e-10), (2, 1e-8)]),
        };
        (c, ctx)
    }

    #[test]
    fn context_validation_accepts_well_formed_slot() {
        let (c, ctx) = tiny_ctx();
        ctx.validate(&c).unwrap();
    }

    #[test]
    fn context_without_device_is_rejected() {
        let (c, mut ctx) = tiny_ctx();
        ctx.accessible = vec![2];
        assert!(ctx.validate(&c).is_err());
    }

    #[test]
    fn context_with_missing_kappa_is_rejected() {
        let (c, mut ctx) = tiny_ctx();
        ctx.kappa.remove(&2);
        assert!(ctx.validate(&c).is_err());
    }

    #[test]
    fn decision_validation_catches_inaccessible_node_and_missing_task() {
        let (_, ctx) = tiny_ctx();
        let id = ctx.tasks[0].id;
        let bad = Decision {
            assignments: BTreeMap::from([(id, 1)]),
        };
        assert!(matches!(
            bad.validate(&ctx),
            Err(ModelError::NotAccessible { node: 1, .. })
        ));
        let empty = Decision {
            assignments: BTreeMap::new(),
        };
        assert!(matches!(
            empty.validate(&ctx),
            Err(ModelError::MissingAssignment { .. })
        ));
        let ok = Decision {
            assignments: BTreeMap::from([(id, 2)]),
        };
        ok.validate(&ctx).unwrap();
    }
}
