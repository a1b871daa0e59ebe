//! Dynamic tomography reconstruction with optical-flow motion
//! regularization, solved in a generalized Krylov subspace.

pub mod driver;
pub mod error;
pub mod flow;
pub mod linalg;
pub mod metrics;
pub mod mmgks;
pub mod motion;
pub mod operators;
pub mod phantoms;
pub mod sequence;
pub mod tomo;

pub use error::{Error, Result};
pub use flow::FlowField;
pub use operators::SparseOperator;
pub use sequence::{Image, ImageSequence};
