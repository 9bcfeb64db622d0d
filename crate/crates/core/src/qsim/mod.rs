//! Classical stand-ins for the quantum sampling and mean-estimation
//! primitives. Outputs follow the same distributions/contracts; the speedup
//! exists only as modeled query counts in the [`CostLedger`].

mod ledger;
mod matvec;
mod rng;
mod sample;

pub use ledger::{polylog, CostLedger, LedgerSnapshot};
pub use matvec::{
    energy_norm, qmatvec, qmatvec_cost, MeanBackend, MeanEstimate, MeanEstimatorConfig,
    MAX_MC_RETRIES,
};
pub use rng::{derive_seed, rng_from_seed, SimRng};
pub use sample::{
    qleverage_score, qsample, qsample_cost, qsample_probabilities, LeverageSample,
    MIN_PROBABILITY,
};

use crate::error::Result;
use crate::linalg::DenseMatrix;

/// Row access to an implicit `len × dim` matrix.
pub trait RowOracle: Sync {
    fn len(&self) -> usize;
    fn dim(&self) -> usize;
    fn row(&self, i: usize) -> Result<Vec<f64>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl RowOracle for DenseMatrix {
    fn len(&self) -> usize {
        self.rows()
    }

    fn dim(&self) -> usize {
        self.cols()
    }

    fn row(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.rows() {
            return Err(crate::Error::IndexOutOfRange {
                index: i,
                len: self.rows(),
            });
        }
        Ok(DenseMatrix::row(self, i).to_vec())
    }
}
