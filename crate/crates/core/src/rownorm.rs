//! Softmax normalizer estimation: preprocess once, then answer
//! `b_i ≈ (exp(QKᵀ)·1)_i` per row.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, DenseMatrix, Vector, WeightedSampleSet, DEFAULT_REL_TOL};
use crate::nystrom::{self, KernelOracle, NystromConfig, NystromFactor};
use crate::oracle::{self, AttentionInstance, CountingAccess};
use crate::qsim::{self, derive_seed, CostLedger, MeanEstimatorConfig, RowOracle};

#[derive(Clone, Debug)]
pub struct RowNormSketch {
    factor: NystromFactor,
    mu_tilde: Vector,
    energy_error: f64,
    instance: Arc<AttentionInstance>,
    lambda: f64,
    epsilon: f64,
}

/// Failure probability handed to the Nyström sub-call: `1/(n³ + 2)`.
pub fn nystrom_delta(n: usize) -> f64 {
    1.0 / ((n as f64).powi(3) + 2.0)
}

/// Nyström configuration used by [`preprocess`] for this instance; computes
/// `s_λ` densely, outside the ledger.
pub fn default_nystrom_config(inst: &AttentionInstance, lambda: f64, seed: u64) -> Result<NystromConfig> {
    let stat_dim = oracle::instance_statistical_dimension(inst, lambda)?;
    Ok(NystromConfig::new(lambda, nystrom_delta(inst.n()), seed)?.with_stat_dim(stat_dim))
}

/// Samples landmarks over `Q ∪ K` and estimates `μ̃ ≈ U₂ᵀ1_n`.
pub fn preprocess(
    inst: Arc<AttentionInstance>,
    lambda: f64,
    epsilon: f64,
    cfg: &MeanEstimatorConfig,
    ledger: &CostLedger,
) -> Result<RowNormSketch> {
    let ny = default_nystrom_config(&inst, lambda, derive_seed(cfg.seed, 1))?;
    preprocess_with(inst, &ny, epsilon, cfg, ledger)
}

pub fn preprocess_with(
    inst: Arc<AttentionInstance>,
    ny: &NystromConfig,
    epsilon: f64,
    cfg: &MeanEstimatorConfig,
    ledger: &CostLedger,
) -> Result<RowNormSketch> {
    inst.require_scaled()?;
    let sample = nystrom::qnystrom(&CountingAccess::new(&inst, ledger), ny, ledger)?;
    from_sample(inst, sample, ny.lambda, epsilon, cfg, ledger)
}

/// Builds the sketch on a given landmark set with `v = 1_n`.
pub fn from_sample(
    inst: Arc<AttentionInstance>,
    sample: WeightedSampleSet,
    lambda: f64,
    epsilon: f64,
    cfg: &MeanEstimatorConfig,
    ledger: &CostLedger,
) -> Result<RowNormSketch> {
    let ones = vec![1.0; inst.n()];
    from_sample_with_vector(inst, sample, &ones, lambda, epsilon, cfg, ledger)
}

/// As [`from_sample`] for a general `v` with `‖v‖_∞ ≤ 1`; queries then
/// estimate `(Av)_i`.
pub fn from_sample_with_vector(
    inst: Arc<AttentionInstance>,
    sample: WeightedSampleSet,
    v: &[f64],
    lambda: f64,
    epsilon: f64,
    cfg: &MeanEstimatorConfig,
    ledger: &CostLedger,
) -> Result<RowNormSketch> {
    inst.require_scaled()?;
    if !(lambda > 0.0) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let cfg = MeanEstimatorConfig { epsilon, ..*cfg };
    cfg.validate()?;
    let access = CountingAccess::new(&inst, ledger);
    let factor = NystromFactor::build(&access, sample, DEFAULT_REL_TOL)?;
    let u2 = KeyRows {
        factor: &factor,
        access,
    };
    let est = qsim::qmatvec(&u2, v, &cfg, ledger)?;
    Ok(RowNormSketch {
        factor,
        mu_tilde: est.mu,
        energy_error: est.energy_error,
        instance: inst,
        lambda,
        epsilon,
    })
}

/// Row oracle for `U₂`: key rows of the Nyström factor.
struct KeyRows<'a> {
    factor: &'a NystromFactor,
    access: CountingAccess<'a>,
}

impl RowOracle for KeyRows<'_> {
    fn len(&self) -> usize {
        self.access.n()
    }

    fn dim(&self) -> usize {
        self.factor.rank_dim()
    }

    fn row(&self, j: usize) -> Result<Vec<f64>> {
        self.factor.row(&self.access, self.access.n() + j)
    }
}

impl RowNormSketch {
    pub fn s(&self) -> usize {
        self.factor.rank_dim()
    }

    pub fn sample(&self) -> &WeightedSampleSet {
        self.factor.sample()
    }

    pub fn n_matrix(&self) -> &DenseMatrix {
        self.factor.n_matrix()
    }

    pub fn mu_tilde(&self) -> &Vector {
        &self.mu_tilde
    }

    /// Verified energy-norm error of `μ̃`.
    pub fn energy_error(&self) -> f64 {
        self.energy_error
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn instance(&self) -> &Arc<AttentionInstance> {
        &self.instance
    }

    /// `b_i = ⟨(U₁)_i, μ̃⟩`.
    pub fn query(&self, i: usize) -> Result<f64> {
        let n = self.instance.n();
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, len: n });
        }
        Ok(dot(&self.factor.row(self.instance.as_ref(), i)?, &self.mu_tilde))
    }

    pub fn query_all(&self) -> Result<Vector> {
        Vector::new((0..self.instance.n()).map(|i| self.query(i)).collect::<Result<_>>()?)
    }

    /// Dense `(U₁, U₂)`. Diagnostic use.
    pub fn materialize(&self) -> Result<(DenseMatrix, DenseMatrix)> {
        let n = self.instance.n();
        let inst: &AttentionInstance = &self.instance;
        let rows: Vec<Vec<f64>> = (0..inst.size()).map(|j| self.factor.row(inst, j)).collect::<Result<_>>()?;
        let s = self.s();
        Ok((
            DenseMatrix::from_fn(n, s, |i, k| rows[i][k]),
            DenseMatrix::from_fn(n, s, |i, k| rows[n + i][k]),
        ))
    }
}

/// `ε(‖A‖ + λ) + λ√n`.
pub fn query_error_bound(epsilon: f64, a_norm: f64, lambda: f64, n: usize) -> f64 {
    epsilon * (a_norm + lambda) + lambda * (n as f64).sqrt()
}

/// `λ√n/‖A‖`, the choice of `ε` that balances the two error terms.
pub fn suggested_epsilon(lambda: f64, n: usize, a_norm: f64) -> f64 {
    lambda * (n as f64).sqrt() / a_norm
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyTransfer {
    pub lhs: f64,
    pub rhs: f64,
}

/// `lhs = ‖U₁x‖₂`, `rhs = ‖x‖_{(U₂ᵀU₂)†}·‖U₁U₂ᵀ‖`.
pub fn energy_transfer_check(u1: &DenseMatrix, u2: &DenseMatrix, x: &[f64]) -> Result<EnergyTransfer> {
    if u1.cols() != u2.cols() || x.len() != u1.cols() {
        return Err(Error::Dimension(format!(
            "U₁ {:?}, U₂ {:?}, x of length {}",
            u1.shape(),
            u2.shape(),
            x.len()
        )));
    }
    let lhs = u1.matvec(x).iter().map(|v| v * v).sum::<f64>().sqrt();
    let g = u2.transpose().matmul(u2).symmetrize();
    let energy = qsim::energy_norm(x, &linalg::pseudo_inverse(&g, DEFAULT_REL_TOL));
    let rhs = energy * linalg::spectral_norm(&u1.matmul(&u2.transpose()));
    Ok(EnergyTransfer { lhs, rhs })
}
