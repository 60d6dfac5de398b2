//! Equilibrium measures for the logarithmic (or Riesz) interaction energy
//! penalized by the quadratic Wasserstein distance to a reference measure.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod energy;
pub mod envelope;
pub mod error;
pub mod flow;
pub mod kernel;
pub mod loggas;
pub mod measure;
pub mod scenario;
pub mod solver;
pub mod transport;

pub use error::{Error, Result};
