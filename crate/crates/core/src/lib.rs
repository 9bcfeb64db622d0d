//! Classical simulator of a sublinear quantum attention-approximation pipeline.
//!
//! The pipeline approximates a row of `softmax(QKᵀ) V` from row queries only:
//!
//! * [`nystrom`] samples landmarks of the exponential kernel over `Q ∪ K` by
//!   recursive generalized ridge leverage scores;
//! * [`rownorm`] estimates the softmax normalizers through a mean-estimation
//!   stand-in;
//! * [`amm`] samples rows of `V` by leverage score;
//! * [`qattention`] combines the three into a preprocess/row-query structure.
//!
//! Quantum subroutines are simulated classically in [`qsim`]; their modeled
//! query counts accumulate in a [`CostLedger`]. [`oracle`] holds the exact
//! brute-force references everything is checked against.

pub mod amm;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod nystrom;
pub mod oracle;
pub mod qattention;
pub mod qsim;
pub mod rownorm;

pub use error::{Error, Result};
pub use linalg::{DenseMatrix, Vector, WeightedSampleSet};
pub use oracle::AttentionInstance;
pub use qsim::{CostLedger, MeanBackend, MeanEstimatorConfig};

#[cfg(test)]
pub(crate) mod test_support;
