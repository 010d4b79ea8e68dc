//! Differentially private materialized views ("p-views") of count tensors.
//!
//! A sensitive table is binned into a sparse count tensor, partitioned into
//! blocks by a privately randomized recursive bisection, and released as
//! blocks with noisy sums. Any number of range counting queries can then be
//! answered from the view, together with probabilistic error bounds,
//! without touching the data again.

pub mod bounds;
pub mod codec;
pub mod error;
pub mod eval;
pub mod mechanisms;
pub mod partition;
pub mod range;
pub mod schema;
pub mod tensor;
pub mod view;

pub use bounds::{error_bounds, ErrorBound, Xi};
pub use error::{Error, Result};
pub use partition::{build_view, BisectionOptions, Hyperparams, MechanismParams};
pub use range::{IndexRange, RangeQuery};
pub use schema::{AttributeSpec, Schema};
pub use tensor::{Block, CountTensor, LoadOptions};
pub use view::{PView, ViewBlock, ViewKind};
