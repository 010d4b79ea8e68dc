//! Evaluation harness: workloads, the Identity baseline, synthetic data and
//! repeated-trial experiments.

pub mod experiment;
pub mod identity;
pub mod synth;
pub mod workload;

pub use experiment::{run_experiment, ExperimentConfig, Mechanism, Report, ReportRow};
pub use identity::{identity_view, DEFAULT_DENSE_LIMIT};
pub use synth::SyntheticSpec;
pub use workload::{rmse, Workload, WorkloadSpec};
