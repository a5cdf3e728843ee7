//! Bayesian robust tensor ring (BRTR) decomposition.
//!
//! Given a partially observed, outlier-corrupted N-way tensor, the crate
//! infers a low-rank tensor-ring component, a sparse outlier component and
//! noise precisions via mean-field variational Bayes, with the TR rank
//! determined automatically by pruning shrunk components.

pub mod error;
pub mod inference;
pub mod io;
pub mod metrics;
pub mod synth;
pub mod tensor;
pub mod tr;

pub use error::{Error, Result};
pub use tensor::{DenseTensor, IndexMask, MultiIndex, Shape};
pub use tr::{TRCores, TRRank};
