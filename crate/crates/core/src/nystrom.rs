//! Recursive generalized-ridge-leverage-score Nyström sampling.

use nalgebra::Cholesky;
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, dot, DenseMatrix, Vector, WeightedSampleSet, DEFAULT_REL_TOL};
use crate::oracle::{self, AttentionInstance};
use crate::qsim::{derive_seed, qsample_probabilities, rng_from_seed, CostLedger};

/// Kernel evaluations over an indexed dataset of `size()` points.
pub trait KernelOracle: Sync {
    fn size(&self) -> usize;
    fn eval(&self, i: usize, j: usize) -> Result<f64>;
}

/// Uncounted access to the `Q ∪ K` kernel, for reference computations.
impl KernelOracle for AttentionInstance {
    fn size(&self) -> usize {
        2 * self.n()
    }

    fn eval(&self, i: usize, j: usize) -> Result<f64> {
        self.kernel_entry(i, j)
    }
}

/// A point set with an arbitrary scalar kernel; each evaluation charges one
/// kernel eval and two row reads.
pub struct DatasetKernel<'a, F> {
    points: &'a [Vector],
    kernel: F,
    ledger: &'a CostLedger,
}

impl<'a, F> DatasetKernel<'a, F>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    pub fn new(points: &'a [Vector], kernel: F, ledger: &'a CostLedger) -> Self {
        Self {
            points,
            kernel,
            ledger,
        }
    }
}

impl<F> KernelOracle for DatasetKernel<'_, F>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    fn size(&self) -> usize {
        self.points.len()
    }

    fn eval(&self, i: usize, j: usize) -> Result<f64> {
        self.ledger.charge_kernel_evals(1);
        self.ledger.charge_qk_rows(2);
        (self.kernel)(&self.points[i], &self.points[j])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NystromConfig {
    pub lambda: f64,
    pub delta: f64,
    pub sample_cap_factor: f64,
    pub oversample_q_constant: f64,
    pub q_scale_constant: f64,
    pub seed: u64,
    /// `s_λ` of the kernel matrix. Required by [`qnystrom`].
    pub stat_dim: Option<f64>,
}

impl NystromConfig {
    pub fn new(lambda: f64, delta: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            lambda,
            delta,
            sample_cap_factor: 4.0,
            oversample_q_constant: 16.0,
            q_scale_constant: 5.0,
            seed,
            stat_dim: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stat_dim(mut self, stat_dim: f64) -> Self {
        self.stat_dim = Some(stat_dim);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Parameter(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        for (name, v) in [
            ("sample_cap_factor", self.sample_cap_factor),
            ("oversample_q_constant", self.oversample_q_constant),
            ("q_scale_constant", self.q_scale_constant),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if let Some(s) = self.stat_dim {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Parameter(format!("stat_dim must be nonnegative, got {s}")));
            }
        }
        Ok(())
    }

    /// `s = ⌈sample_cap_factor · s_λ · ln(s_λ/δ + 2)⌉`, at least 1.
    pub fn target_size(&self, stat_dim: f64) -> usize {
        let s = self.sample_cap_factor * stat_dim * (stat_dim / self.delta + 2.0).ln();
        (s.ceil() as usize).max(1)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainLevel {
    /// `S_t`, ascending.
    pub subset: Vec<usize>,
    /// `D_t` over the full index space.
    pub sample: WeightedSampleSet,
    /// `Σ p_i` at this level (0 for the base level).
    pub probability_sum: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleChain {
    pub target_size: usize,
    pub levels: Vec<ChainLevel>,
}

impl SampleChain {
    pub fn final_sample(&self) -> &WeightedSampleSet {
        &self.levels.last().expect("chain has at least one level").sample
    }

    pub fn into_final(self) -> WeightedSampleSet {
        self.levels.into_iter().last().expect("chain has at least one level").sample
    }
}

/// Samples landmarks for the kernel behind `oracle`. `cfg.stat_dim` must be set.
pub fn qnystrom(
    oracle: &impl KernelOracle,
    cfg: &NystromConfig,
    ledger: &CostLedger,
) -> Result<WeightedSampleSet> {
    Ok(qnystrom_chain(oracle, cfg, ledger)?.into_final())
}

/// [`qnystrom`] over an explicit dataset and scalar kernel. When
/// `cfg.stat_dim` is unset it is computed from the dense kernel matrix
/// without charging the ledger.
pub fn qnystrom_kernel<F>(
    dataset: &[Vector],
    kernel: F,
    cfg: &NystromConfig,
    ledger: &CostLedger,
) -> Result<WeightedSampleSet>
where
    F: Fn(&[f64], &[f64]) -> Result<f64> + Sync,
{
    let mut cfg = *cfg;
    if cfg.stat_dim.is_none() {
        let n = dataset.len();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| kernel(&dataset[i], &dataset[j])).collect())
            .collect::<Result<_>>()?;
        let e = DenseMatrix::from_rows(&rows)?;
        cfg.stat_dim = Some(linalg::statistical_dimension(&e, cfg.lambda)?);
    }
    qnystrom(&DatasetKernel::new(dataset, kernel, ledger), &cfg, ledger)
}

/// Full run with every level of the chain retained.
pub fn qnystrom_chain(
    oracle: &impl KernelOracle,
    cfg: &NystromConfig,
    ledger: &CostLedger,
) -> Result<SampleChain> {
    cfg.validate()?;
    let stat_dim = cfg.stat_dim.ok_or_else(|| {
        Error::Parameter("stat_dim must be supplied to the Nyström sampler".into())
    })?;
    let n = oracle.size();
    if n == 0 {
        return Err(Error::Parameter("Nyström dataset is empty".into()));
    }
    let s = cfg.target_size(stat_dim);
    if n <= s {
        return Ok(SampleChain {
            target_size: s,
            levels: vec![ChainLevel {
                subset: (0..n).collect(),
                sample: WeightedSampleSet::full(n),
                probability_sum: n as f64,
            }],
        });
    }

    let depth = (n as f64 / s as f64).log2().ceil() as usize;
    let mut rng = rng_from_seed(cfg.seed);
    let mut subsets = vec![(0..n).collect::<Vec<usize>>()];
    for _ in 0..depth {
        let parent = subsets.last().expect("nonempty");
        let keep = parent.len().div_ceil(2);
        let mut picked: Vec<usize> = index::sample(&mut rng, parent.len(), keep)
            .into_iter()
            .map(|pos| parent[pos])
            .collect();
        picked.sort_unstable();
        subsets.push(picked);
    }
    subsets.reverse();

    let halving_weight = |t: usize| 2f64.powf((depth - t) as f64 / 2.0);
    let base = WeightedSampleSet::uniform_weight(subsets[0].clone(), n, halving_weight(0));
    let mut gram = weighted_gram(oracle, &base)?;
    ledger.charge_modeled("nystrom_landmarks", base.len() as f64);
    let mut levels = vec![ChainLevel {
        subset: subsets[0].clone(),
        sample: base,
        probability_sum: 0.0,
    }];

    let oversample = cfg.oversample_q_constant * (2.0 * s as f64 / cfg.delta).ln();
    let cap = (cfg.sample_cap_factor * s as f64 * 8.0).ceil() as usize;
    for t in 1..=depth {
        let prev = &levels[t - 1].sample;
        let solver = RegularizedSolver::new(&gram, cfg.lambda)?;
        let subset = &subsets[t];
        let probabilities: Vec<f64> = subset
            .par_iter()
            .map(|&i| {
                let q = ridge_oracle(oracle, prev, &solver, i, cfg)?;
                Ok((oversample * q).min(1.0))
            })
            .collect::<Result<_>>()?;
        let p_sum: f64 = probabilities.iter().sum();

        let mut drawn = qsample_probabilities(&probabilities, 1.0, "nystrom", &mut rng, ledger)?;
        if drawn.len() > cap {
            let mut retry = rng_from_seed(derive_seed(cfg.seed, 0x4e79_0000 + t as u64));
            drawn = qsample_probabilities(&probabilities, 1.0, "nystrom", &mut retry, ledger)?;
            if drawn.len() > cap {
                return Err(Error::SampleExplosion {
                    level: t,
                    size: drawn.len(),
                    cap,
                });
            }
        }
        let sample = drawn.lift(subset, n, halving_weight(t));
        gram = weighted_gram(oracle, &sample)?;
        ledger.charge_modeled("nystrom_landmarks", sample.len() as f64);
        levels.push(ChainLevel {
            subset: subset.clone(),
            sample,
            probability_sum: p_sum,
        });
    }
    Ok(SampleChain {
        target_size: s,
        levels,
    })
}

/// `q_i = (c/λ)·(K(x_i,x_i) − kᵢᵀ(M+λI)⁻¹kᵢ)` with `kᵢ = Dᵀ K_i`.
fn ridge_oracle(
    oracle: &impl KernelOracle,
    prev: &WeightedSampleSet,
    solver: &RegularizedSolver,
    i: usize,
    cfg: &NystromConfig,
) -> Result<f64> {
    let diag = oracle.eval(i, i)?;
    let k: Vec<f64> = prev
        .iter()
        .map(|smp| Ok(smp.weight * oracle.eval(i, smp.index)?))
        .collect::<Result<_>>()?;
    let residual = diag - dot(&k, &solver.solve(&k));
    if residual < -1e-9 * diag.abs().max(1.0) {
        return Err(Error::Internal(format!(
            "negative ridge residual {residual:e} at index {i}"
        )));
    }
    Ok(cfg.q_scale_constant / cfg.lambda * residual.max(0.0))
}

struct RegularizedSolver {
    chol: Option<Cholesky<f64, nalgebra::Dyn>>,
}

impl RegularizedSolver {
    fn new(gram: &DenseMatrix, lambda: f64) -> Result<Self> {
        if gram.rows() == 0 {
            return Ok(Self { chol: None });
        }
        let chol = Cholesky::new(gram.add_identity(lambda).symmetrize().to_nalgebra())
            .ok_or_else(|| Error::Internal("M + λI is not positive definite".into()))?;
        Ok(Self { chol: Some(chol) })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        match &self.chol {
            None => Vec::new(),
            Some(c) => c
                .solve(&nalgebra::DVector::from_column_slice(b))
                .iter()
                .copied()
                .collect(),
        }
    }
}

/// `SᵀES` evaluated through the oracle (upper triangle, mirrored).
pub fn weighted_gram(oracle: &impl KernelOracle, s: &WeightedSampleSet) -> Result<DenseMatrix> {
    let smp = s.samples();
    let m = smp.len();
    let upper: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|a| {
            (a..m)
                .map(|b| Ok(smp[a].weight * smp[b].weight * oracle.eval(smp[a].index, smp[b].index)?))
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut g = DenseMatrix::zeros(m, m);
    for (a, row) in upper.iter().enumerate() {
        for (off, &val) in row.iter().enumerate() {
            g.set(a, a + off, val);
            g.set(a + off, a, val);
        }
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    /// `E − λI ⪯ Ẽ ⪯ E` within tolerance.
    pub ok: bool,
    /// `λ_min(Ẽ − E)`: the lower side as literally stated, `E ⪯ Ẽ`.
    pub min_eig_lower: f64,
    /// `λ_min(E + λI − Ẽ)`.
    pub min_eig_upper: f64,
    /// `λ_min(E − Ẽ)`: the compression side, `Ẽ ⪯ E`.
    pub min_eig_compression: f64,
    /// `λ_min(Ẽ + λI − E)`.
    pub min_eig_regularized: f64,
}

/// Eigenvalue gaps between `E` and its Nyström approximation through `S`.
pub fn sandwich_check(e: &DenseMatrix, s: &WeightedSampleSet, lambda: f64, tol: f64) -> SandwichReport {
    let et = oracle::nystrom_explicit(e, s, DEFAULT_REL_TOL);
    let diff = et.sub(e);
    let scale = linalg::spectral_norm(e);
    let min_eig_lower = linalg::min_eigenvalue(&diff);
    let min_eig_upper = linalg::min_eigenvalue(&diff.scale(-1.0).add_identity(lambda));
    let min_eig_compression = linalg::min_eigenvalue(&diff.scale(-1.0));
    let min_eig_regularized = linalg::min_eigenvalue(&diff.add_identity(lambda));
    SandwichReport {
        ok: min_eig_compression >= -tol * scale && min_eig_regularized >= -tol * scale,
        min_eig_lower,
        min_eig_upper,
        min_eig_compression,
        min_eig_regularized,
    }
}

/// `N = (SᵀES)^{†/2}` together with the landmark set; rows of
/// `U = ES·N` are produced on demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NystromFactor {
    sample: WeightedSampleSet,
    n_mat: DenseMatrix,
}

impl NystromFactor {
    pub fn build(oracle: &impl KernelOracle, sample: WeightedSampleSet, rel_tol: f64) -> Result<Self> {
        if sample.source_size() != oracle.size() {
            return Err(Error::Dimension(format!(
                "sample over {} points, kernel over {}",
                sample.source_size(),
                oracle.size()
            )));
        }
        let gram = weighted_gram(oracle, &sample)?;
        let n_mat = linalg::psd_inv_sqrt(&gram, rel_tol)?;
        Ok(Self { sample, n_mat })
    }

    pub fn sample(&self) -> &WeightedSampleSet {
        &self.sample
    }

    pub fn n_matrix(&self) -> &DenseMatrix {
        &self.n_mat
    }

    pub fn rank_dim(&self) -> usize {
        self.sample.len()
    }

    /// `(S_k · K(x_j, x_k))_k` over the landmarks.
    pub fn weighted_kernel_row(&self, oracle: &impl KernelOracle, j: usize) -> Result<Vec<f64>> {
        self.sample
            .iter()
            .map(|smp| Ok(smp.weight * oracle.eval(j, smp.index)?))
            .collect()
    }

    /// Row `j` of `U = ES(SᵀES)^{†/2}`.
    pub fn row(&self, oracle: &impl KernelOracle, j: usize) -> Result<Vec<f64>> {
        Ok(self.n_mat.matvec(&self.weighted_kernel_row(oracle, j)?))
    }
}

#[derive(Clone, Debug)]
pub struct AttentionBlock {
    pub u1: DenseMatrix,
    pub u2: DenseMatrix,
    pub factor: NystromFactor,
}

impl AttentionBlock {
    /// `Ã = U₁U₂ᵀ`.
    pub fn tilde_a(&self) -> DenseMatrix {
        self.u1.matmul(&self.u2.transpose())
    }
}

/// Dense `U₁` (query rows) and `U₂` (key rows) of the Nyström factor.
pub fn extract_attention_block(
    s: &WeightedSampleSet,
    inst: &AttentionInstance,
    rel_tol: f64,
) -> Result<AttentionBlock> {
    inst.require_scaled()?;
    let factor = NystromFactor::build(inst, s.clone(), rel_tol)?;
    let n = inst.n();
    let rows: Vec<Vec<f64>> = (0..2 * n)
        .into_par_iter()
        .map(|j| factor.row(inst, j))
        .collect::<Result<_>>()?;
    let r = factor.rank_dim();
    let u1 = DenseMatrix::from_fn(n, r, |i, k| rows[i][k]);
    let u2 = DenseMatrix::from_fn(n, r, |i, k| rows[n + i][k]);
    Ok(AttentionBlock { u1, u2, factor })
}
