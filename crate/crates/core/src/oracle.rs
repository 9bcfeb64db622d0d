//! Exact dense references: kernel matrix, attention, normalizers, explicit
//! Nyström and generalized ridge leverage scores. Also the counting accessors
//! through which the sketching code reads `Q`, `K` and `V`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, checked_exp, dot, DenseMatrix, Vector, WeightedSampleSet};
use crate::nystrom::KernelOracle;
use crate::qsim::{CostLedger, RowOracle};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionInstance {
    q: DenseMatrix,
    k: DenseMatrix,
    v: DenseMatrix,
    scaled: bool,
}

impl AttentionInstance {
    /// Unscaled instance; call [`scale_qk`](Self::scale_qk) before use.
    pub fn new(q: DenseMatrix, k: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        Self::build(q, k, v, false)
    }

    /// Instance whose `Q`, `K` already carry the `d^{-1/4}` factor.
    pub fn new_scaled(q: DenseMatrix, k: DenseMatrix, v: DenseMatrix) -> Result<Self> {
        Self::build(q, k, v, true)
    }

    fn build(q: DenseMatrix, k: DenseMatrix, v: DenseMatrix, scaled: bool) -> Result<Self> {
        if q.rows() == 0 || q.cols() == 0 {
            return Err(Error::Dimension("instance needs n ≥ 1 and d ≥ 1".into()));
        }
        if k.shape() != q.shape() || v.shape() != q.shape() {
            return Err(Error::Dimension(format!(
                "Q {:?}, K {:?}, V {:?} must share n×d",
                q.shape(),
                k.shape(),
                v.shape()
            )));
        }
        Ok(Self { q, k, v, scaled })
    }

    pub fn n(&self) -> usize {
        self.q.rows()
    }

    pub fn d(&self) -> usize {
        self.q.cols()
    }

    pub fn is_scaled(&self) -> bool {
        self.scaled
    }

    pub fn q(&self) -> &DenseMatrix {
        &self.q
    }

    pub fn k(&self) -> &DenseMatrix {
        &self.k
    }

    pub fn v(&self) -> &DenseMatrix {
        &self.v
    }

    /// Multiplies `Q` and `K` by `d^{-1/4}`.
    pub fn scale_qk(self) -> Result<Self> {
        if self.scaled {
            return Err(Error::State("Q and K are already scaled".into()));
        }
        let f = (self.d() as f64).powf(-0.25);
        Ok(Self {
            q: self.q.scale(f),
            k: self.k.scale(f),
            v: self.v,
            scaled: true,
        })
    }

    /// Point `x_j` of the `Q ∪ K` dataset: rows of `Q` then rows of `K`.
    pub fn point(&self, j: usize) -> &[f64] {
        let n = self.n();
        if j < n {
            self.q.row(j)
        } else {
            self.k.row(j - n)
        }
    }

    pub(crate) fn require_scaled(&self) -> Result<()> {
        if self.scaled {
            Ok(())
        } else {
            Err(Error::State("Q and K must be scaled first".into()))
        }
    }

    /// `exp(⟨x_i, x_j⟩)` over the `2n` points, uncounted.
    pub fn kernel_entry(&self, i: usize, j: usize) -> Result<f64> {
        checked_exp(dot(self.point(i), self.point(j)), Some((i, j)))
    }
}

fn require_scaled(inst: &AttentionInstance) -> Result<()> {
    inst.require_scaled()
}

/// The `2n×2n` kernel matrix over `Q ∪ K`.
pub fn kernel_matrix(inst: &AttentionInstance) -> Result<DenseMatrix> {
    require_scaled(inst)?;
    let m = 2 * inst.n();
    let rows: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| (0..m).map(|j| inst.kernel_entry(i, j)).collect())
        .collect::<Result<_>>()?;
    DenseMatrix::from_rows(&rows)
}

/// `A = exp(QKᵀ)`.
pub fn attention_matrix(inst: &AttentionInstance) -> Result<DenseMatrix> {
    require_scaled(inst)?;
    let n = inst.n();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| inst.kernel_entry(i, n + j)).collect())
        .collect::<Result<_>>()?;
    DenseMatrix::from_rows(&rows)
}

/// `A·1_n`.
pub fn normalization_exact(inst: &AttentionInstance) -> Result<Vector> {
    let a = attention_matrix(inst)?;
    Vector::new((0..inst.n()).map(|i| a.row(i).iter().sum()).collect())
}

/// `D⁻¹AV`.
pub fn attention_exact(inst: &AttentionInstance) -> Result<DenseMatrix> {
    let a = attention_matrix(inst)?;
    let mut out = a.matmul(inst.v());
    for i in 0..inst.n() {
        let d: f64 = a.row(i).iter().sum();
        for c in 0..inst.d() {
            out.set(i, c, out.get(i, c) / d);
        }
    }
    Ok(out)
}

/// `Ẽ = ES(SᵀES)†SᵀE`.
pub fn nystrom_explicit(e: &DenseMatrix, s: &WeightedSampleSet, rel_tol: f64) -> DenseMatrix {
    let n = e.rows();
    assert_eq!(s.source_size(), n, "sample set and kernel sizes differ");
    if s.is_empty() {
        return DenseMatrix::zeros(n, n);
    }
    let es = s.sketch_cols(e);
    let core = linalg::pseudo_inverse(&s.sketch_gram(e).symmetrize(), rel_tol);
    es.matmul(&core).matmul(&es.transpose()).symmetrize()
}

/// `τ̃_i = (1/λ)·(E − ES(SᵀES + λI)⁻¹SᵀE)_{ii}`.
///
/// Evaluated as `ℓ_iᵀ(LᵀSSᵀL + λI)⁻¹ℓ_i` with `E = LLᵀ`, which avoids the
/// cancellation in the direct form when `‖E‖ ≫ λ`.
pub fn gen_ridge_ls_exact(e: &DenseMatrix, s: &WeightedSampleSet, lambda: f64) -> Result<Vector> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    let n = e.rows();
    if s.source_size() != n {
        return Err(Error::Dimension(format!(
            "sample set over {} points, kernel over {n}",
            s.source_size()
        )));
    }
    if s.is_empty() {
        return Vector::new(e.diag().iter().map(|x| x / lambda).collect());
    }
    let (values, vectors) = linalg::symmetric_eigen(&e.symmetrize());
    let l = DenseMatrix::from_fn(n, n, |i, k| vectors.get(i, k) * values[k].max(0.0).sqrt());
    let z = s.sketch_rows(&l);
    let inner = z.transpose().matmul(&z).symmetrize().add_identity(lambda);
    let chol = nalgebra::Cholesky::new(inner.to_nalgebra())
        .ok_or_else(|| Error::Internal("LᵀSSᵀL + λI is not positive definite".into()))?;
    let x = DenseMatrix::from_nalgebra(&chol.solve(&l.transpose().to_nalgebra()));
    Vector::new((0..n).map(|i| dot(l.row(i), &x.column(i))).collect())
}

/// `s_λ(E)` for the instance's kernel matrix.
pub fn instance_statistical_dimension(inst: &AttentionInstance, lambda: f64) -> Result<f64> {
    linalg::statistical_dimension(&kernel_matrix(inst)?, lambda)
}

/// Ledger-charging view of an instance. Every read of `Q`, `K` or `V` made
/// while sketching goes through here.
#[derive(Clone, Copy)]
pub struct CountingAccess<'a> {
    inst: &'a AttentionInstance,
    ledger: &'a CostLedger,
}

impl<'a> CountingAccess<'a> {
    pub fn new(inst: &'a AttentionInstance, ledger: &'a CostLedger) -> Self {
        Self { inst, ledger }
    }

    pub fn n(&self) -> usize {
        self.inst.n()
    }

    pub fn d(&self) -> usize {
        self.inst.d()
    }

    pub fn ledger(&self) -> &'a CostLedger {
        self.ledger
    }

    pub fn point(&self, j: usize) -> &'a [f64] {
        self.ledger.charge_qk_rows(1);
        self.inst.point(j)
    }

    pub fn value_row(&self, i: usize) -> &'a [f64] {
        self.ledger.charge_v_rows(1);
        self.inst.v().row(i)
    }

    /// Row oracle over `V`.
    pub fn values(&self) -> ValueRows<'a> {
        ValueRows(*self)
    }
}

impl KernelOracle for CountingAccess<'_> {
    fn size(&self) -> usize {
        2 * self.inst.n()
    }

    fn eval(&self, i: usize, j: usize) -> Result<f64> {
        self.ledger.charge_kernel_evals(1);
        checked_exp(dot(self.point(i), self.point(j)), Some((i, j)))
    }
}

#[derive(Clone, Copy)]
pub struct ValueRows<'a>(CountingAccess<'a>);

impl RowOracle for ValueRows<'_> {
    fn len(&self) -> usize {
        self.0.n()
    }

    fn dim(&self) -> usize {
        self.0.d()
    }

    fn row(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.0.n() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.0.n(),
            });
        }
        Ok(self.0.value_row(i).to_vec())
    }
}
