//! Continual quantum measurements: generators, trajectories and the
//! information/entropy balance of the output process.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ensemble;
pub mod error;
pub mod harness;
pub mod information;
pub mod linalg;
pub mod model;
pub mod quadrature;
pub mod semigroup;
pub mod stats;
pub mod trajectory;

pub use error::{Error, Result};
pub use linalg::{CMatrix, DensityMatrix, NnapState, Superoperator, Tolerances, C64};
pub use model::{JumpChannel, MeasurementModel, RawModel};
pub use stats::Estimate;
pub use ensemble::McConfig;
pub use harness::{Check, RunConfig, VerificationReport};
pub use information::{EnsembleSeries, MutualEntropyReport, ShattenDecomposition};
