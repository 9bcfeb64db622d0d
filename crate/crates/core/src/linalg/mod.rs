//! Dense linear algebra: matrices, sampling matrices, pseudoinverses, and the
//! score/dimension quantities (leverage, ridge leverage, statistical dimension,
//! stable rank, row distortion).
//!
//! Decompositions are delegated to `faer` (SVD) and `nalgebra` (symmetric
//! eigen, Cholesky); everything else is computed directly on the row-major
//! [`DenseMatrix`].

mod matrix;
mod sample_set;

use nalgebra::{Cholesky, SymmetricEigen};
use serde::{Deserialize, Serialize};

pub use matrix::{dot, DenseMatrix, Vector};
pub use sample_set::{Sample, WeightedSampleSet};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for pseudoinverses and ranks.
pub const DEFAULT_REL_TOL: f64 = 1e-12;

/// Eigenvalues of nominally-PSD matrices down to `-PSD_CLAMP_TOL * ‖M‖` are clamped to zero.
pub const PSD_CLAMP_TOL: f64 = 1e-9;

/// Relative symmetry tolerance for matrices that must be symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Inner products above this abort instead of overflowing `exp`.
pub const MAX_KERNEL_EXPONENT: f64 = 700.0;

/// `exp(⟨x, y⟩)`.
pub fn exp_kernel(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::Dimension(format!(
            "kernel arguments of length {} and {}",
            x.len(),
            y.len()
        )));
    }
    checked_exp(dot(x, y), None)
}

pub(crate) fn checked_exp(inner_product: f64, pair: Option<(usize, usize)>) -> Result<f64> {
    if inner_product > MAX_KERNEL_EXPONENT || inner_product.is_nan() {
        return Err(Error::Range {
            inner_product,
            pair,
        });
    }
    Ok(inner_product.exp())
}

/// Descending singular values together with the cutoff used to count rank.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSummary {
    pub singular_values: Vec<f64>,
    pub rank_tol: f64,
}

impl SpectrumSummary {
    pub fn of(m: &DenseMatrix, rel_tol: f64) -> Self {
        let singular_values = singular_values(m);
        let rank_tol = rel_tol * singular_values.first().copied().unwrap_or(0.0);
        Self {
            singular_values,
            rank_tol,
        }
    }

    pub fn max(&self) -> f64 {
        self.singular_values.first().copied().unwrap_or(0.0)
    }

    pub fn rank(&self) -> usize {
        self.singular_values
            .iter()
            .filter(|&&s| s > self.rank_tol)
            .count()
    }
}

struct Svd {
    u: DenseMatrix,
    sigma: Vec<f64>,
    v_t: DenseMatrix,
}

fn thin_svd(m: &DenseMatrix) -> Svd {
    let k = m.rows().min(m.cols());
    if k == 0 {
        return Svd {
            u: DenseMatrix::zeros(m.rows(), 0),
            sigma: Vec::new(),
            v_t: DenseMatrix::zeros(0, m.cols()),
        };
    }
    let svd = faer_matrix(m).thin_svd().expect("SVD did not converge");
    let (u, v, sigma) = (svd.U(), svd.V(), svd.S().column_vector());
    Svd {
        u: DenseMatrix::from_fn(m.rows(), k, |i, j| u[(i, j)]),
        sigma: (0..k).map(|i| sigma[i]).collect(),
        v_t: DenseMatrix::from_fn(k, m.cols(), |i, j| v[(j, i)]),
    }
}

// nalgebra's SVD loses the factorization on some rank-deficient inputs
fn faer_matrix(m: &DenseMatrix) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j))
}

pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    if m.rows().min(m.cols()) == 0 {
        return Vec::new();
    }
    faer_matrix(m).singular_values().expect("SVD did not converge")
}

/// Eigen-decomposition of a symmetric matrix: eigenvalues descending, with
/// matching eigenvectors as the columns of the returned matrix.
pub fn symmetric_eigen(m: &DenseMatrix) -> (Vec<f64>, DenseMatrix) {
    let n = m.rows();
    if n == 0 {
        return (Vec::new(), DenseMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(m.symmetrize().to_nalgebra());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DenseMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Vec<f64> {
    symmetric_eigen(m).0
}

pub fn min_eigenvalue(m: &DenseMatrix) -> f64 {
    symmetric_eigenvalues(m)
        .last()
        .copied()
        .unwrap_or(0.0)
}

fn require_symmetric(m: &DenseMatrix, what: &str) -> Result<()> {
    match m.asymmetry() {
        None => Err(Error::Shape(format!(
            "{what} must be square, got {}x{}",
            m.rows(),
            m.cols()
        ))),
        Some(a) if a > SYMMETRY_TOL * m.max_abs().max(1.0) => Err(Error::Shape(format!(
            "{what} is not symmetric (max asymmetry {a:e})"
        ))),
        Some(_) => Ok(()),
    }
}

/// Eigenvalues of a nominally-PSD matrix with small negatives clamped to zero.
fn psd_eigen(m: &DenseMatrix, what: &str) -> Result<(Vec<f64>, DenseMatrix)> {
    require_symmetric(m, what)?;
    let (mut values, vectors) = symmetric_eigen(m);
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    for v in values.iter_mut() {
        if *v < 0.0 {
            if *v < -PSD_CLAMP_TOL * scale {
                return Err(Error::Parameter(format!(
                    "{what} is not PSD: eigenvalue {v:e} against norm {scale:e}"
                )));
            }
            *v = 0.0;
        }
    }
    Ok((values, vectors))
}

/// Moore–Penrose pseudoinverse via SVD. Singular values at or below
/// `rel_tol · σ_max` are treated as zero.
pub fn pseudo_inverse(m: &DenseMatrix, rel_tol: f64) -> DenseMatrix {
    let Svd { u, sigma, v_t } = thin_svd(m);
    let cutoff = rel_tol * sigma.first().copied().unwrap_or(0.0);
    let inv: Vec<f64> = sigma
        .iter()
        .map(|&s| if s > cutoff && s > 0.0 { 1.0 / s } else { 0.0 })
        .collect();
    // V Σ⁺ Uᵀ
    DenseMatrix::from_fn(m.cols(), m.rows(), |i, j| {
        inv.iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(k, &w)| v_t.get(k, i) * w * u.get(j, k))
            .sum()
    })
}

/// `M^{†/2}` for symmetric PSD `M`, via eigendecomposition.
pub fn psd_inv_sqrt(m: &DenseMatrix, rel_tol: f64) -> Result<DenseMatrix> {
    let (values, vectors) = psd_eigen(m, "psd_inv_sqrt input")?;
    let cutoff = rel_tol * values.first().copied().unwrap_or(0.0);
    let inv_sqrt: Vec<f64> = values
        .iter()
        .map(|&v| if v > cutoff && v > 0.0 { v.sqrt().recip() } else { 0.0 })
        .collect();
    Ok(spectral_reassemble(&vectors, &inv_sqrt))
}

/// `W diag(values) Wᵀ`.
pub(crate) fn spectral_reassemble(vectors: &DenseMatrix, values: &[f64]) -> DenseMatrix {
    let n = vectors.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for (k, &w) in values.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for i in 0..n {
            let a = vectors.get(i, k) * w;
            if a == 0.0 {
                continue;
            }
            for j in 0..n {
                out.set(i, j, out.get(i, j) + a * vectors.get(j, k));
            }
        }
    }
    out
}

/// `τ_i = a_iᵀ (AᵀA)† a_i`, computed as squared row norms of the left
/// singular vectors on the numerical range.
pub fn leverage_scores(a: &DenseMatrix) -> Vector {
    let Svd { u, sigma, .. } = thin_svd(a);
    let cutoff = DEFAULT_REL_TOL * sigma.first().copied().unwrap_or(0.0);
    let kept: Vec<usize> = (0..sigma.len())
        .filter(|&k| sigma[k] > cutoff && sigma[k] > 0.0)
        .collect();
    Vector::new(
        (0..a.rows())
            .map(|i| kept.iter().map(|&k| u.get(i, k).powi(2)).sum())
            .collect(),
    )
    .expect("squared singular vectors are finite")
}

fn require_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    Ok(())
}

/// Diagonal of `E (E + λI)^{-1}`, by a Cholesky solve against `E`.
pub fn ridge_leverage_scores(e: &DenseMatrix, lambda: f64) -> Result<Vector> {
    require_lambda(lambda)?;
    require_symmetric(e, "ridge_leverage_scores input")?;
    let n = e.rows();
    let chol = Cholesky::new(e.add_identity(lambda).to_nalgebra()).ok_or_else(|| {
        Error::Parameter("E + λI is not positive definite; E is not PSD".into())
    })?;
    let solved = chol.solve(&e.to_nalgebra());
    Vector::new((0..n).map(|i| solved[(i, i)]).collect())
}

/// `s_λ(E) = tr[E (E + λI)^{-1}] = Σ σ_i / (σ_i + λ)`.
pub fn statistical_dimension(e: &DenseMatrix, lambda: f64) -> Result<f64> {
    require_lambda(lambda)?;
    let (values, _) = psd_eigen(e, "statistical_dimension input")?;
    Ok(values.iter().map(|&s| s / (s + lambda)).sum())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norms {
    pub spectral: f64,
    pub frobenius: f64,
    /// Max row ℓ1 norm.
    pub inf_row_l1: f64,
}

pub fn norms(m: &DenseMatrix) -> Norms {
    Norms {
        spectral: spectral_norm(m),
        frobenius: m.frobenius_norm(),
        inf_row_l1: inf_row_l1(m),
    }
}

pub fn spectral_norm(m: &DenseMatrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn inf_row_l1(m: &DenseMatrix) -> f64 {
    (0..m.rows())
        .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `‖A‖_F² / ‖A‖²`.
pub fn stable_rank(a: &DenseMatrix) -> Result<f64> {
    let spectral = spectral_norm(a);
    if spectral == 0.0 {
        return Err(Error::Parameter("stable rank of a zero matrix".into()));
    }
    Ok(a.frobenius_norm().powi(2) / spectral.powi(2))
}

/// `α(A) = (d / ‖A‖_F²) · max_i ‖a_i‖² / τ_i`. Zero rows (zero leverage)
/// contribute a ratio of 0.
pub fn row_distortion(a: &DenseMatrix) -> Result<f64> {
    let fro2 = a.frobenius_norm().powi(2);
    if fro2 == 0.0 {
        return Err(Error::Parameter("row distortion of a zero matrix".into()));
    }
    let tau = leverage_scores(a);
    let worst = (0..a.rows())
        .map(|i| {
            let mass = dot(a.row(i), a.row(i));
            if tau[i] > 0.0 {
                mass / tau[i]
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max);
    Ok(a.cols() as f64 / fro2 * worst)
}
