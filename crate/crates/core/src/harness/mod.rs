//! Experiment orchestration: configuration, the training loop, evaluation,
//! metrics, checkpoints, and parameter sweeps.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod sweep;
pub mod train;

pub use agent::{Agent, Decision, NetSeeds};
pub use config::{Algo, RunConfig};
pub use metrics::{EvalRow, EvalSummary, TrainRow};
pub use sweep::{sweep, SweepAxis};
pub use train::{evaluate, train, train_to_dir, RunResult, RunSummary};
