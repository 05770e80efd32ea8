//! Deterministic, seed-reproducible simulator and scheduling library for
//! online task offloading in fog-assisted IoT systems.
//!
//! An IoT device (node 0) generates tasks each time slot and assigns every
//! task to itself or to one of the currently accessible fog nodes. Realized
//! transmission rates and CPU frequencies are unknown a priori, so the
//! scheduler learns their reciprocal means with UCB-family estimators while
//! per-node virtual queues enforce long-term time-averaged energy budgets.
//! Node selection minimizes a per-task price combining queue-weighted energy
//! cost and V-weighted estimated latency.
//!
//! Module map:
//! - [`model`]: domain types and global constants.
//! - [`environment`]: the seeded stochastic world and its hidden true means.
//! - [`learner`]: counts, empirical means, optimistic estimates.
//! - [`controller`]: prices, node selection, energy accounting, queues.
//! - [`engine`]: per-slot orchestration producing traces; resume snapshots.
//! - [`metrics`]: regret vs. a clairvoyant baseline, feasibility, backlog
//!   averages, theoretical bound constants.
//!
//! Everything a run produces is a pure function of its configuration and a
//! single `u64` seed.

pub mod controller;
pub mod engine;
pub mod environment;
pub mod learner;
pub mod metrics;
pub mod model;

#[cfg(test)]
pub(crate) mod testutil {
    use crate::model::SystemConstants;

    /// Reference-scale constants: 20 fog nodes, 10 arrivals, l_max 1e7 bits.
    pub fn vi_constants() -> SystemConstants {
        SystemConstants::derive(20, 10, 1e7, 1e10, 5e6, 1e9, 1e-6, 1.5e-8).unwrap()
    }

    /// Relative-error assertion with an absolute fallback at zero.
    pub fn assert_rel(actual: f64, expected: f64, tol: f64) {
        let denom = expected.abs().max(1e-300);
        let rel = (actual - expected).abs() / denom;
        assert!(
            rel <= tol || (actual - expected).abs() <= tol,
            "actual {actual} vs expected {expected} (rel err {rel:.3e} > {tol:.1e})"
        );
    }
}
