//! Experiment runner for the green-offloading simulator: config ingestion,
//! seeded single runs, parameter sweeps, trace persistence, and trace
//! verification. The `lago` binary is a thin wrapper over this library.

pub mod config;
pub mod runner;
pub mod sweep;
pub mod trace;
pub mod verify;

pub use config::RunConfig;
pub use runner::{run_once, RunSummary};
pub use sweep::{run_sweep, SweepParam, SweepTable};
pub use verify::{verify_run, VerifyReport};
