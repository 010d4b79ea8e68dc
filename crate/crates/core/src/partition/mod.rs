//! The bisection mechanism: error measures, parameter derivation and the
//! recursive converge/cut procedure.

pub mod ae;
pub mod bisection;
pub mod params;

pub use ae::{aggregation_error, ae_sensitivity, biased_ae, cut_qualities, quality, CutCandidate};
pub use bisection::{
    build_view, perturb, Bisector, BisectionOptions, Build, CutLog, CutRecord, LeafRecord,
    Partition, Selection, SensitivityMode,
};
pub use params::{derive_params, BudgetBreakdown, Hyperparams, MechanismParams};
