pub mod charfun;
pub mod distfit;
pub mod error;
pub mod mc;
pub mod moments;
pub mod optimize;
pub mod problem;
pub mod quadrature;
pub mod specialfn;

pub use error::{Error, Result};
pub use problem::{BoundaryConfig, BoundaryKind, FptProblem, ProcessParams};
pub use specialfn::ComplexValue;
