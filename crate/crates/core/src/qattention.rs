//! End-to-end attention row queries: preprocess `Q, K, V` through counted
//! row access, then answer `r̃_i ≈ e_iᵀ D⁻¹AV` per row.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::amm::{self, AmmOptions, AmmSketch};
use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, Vector, WeightedSampleSet, DEFAULT_REL_TOL};
use crate::nystrom::{self, KernelOracle, NystromConfig};
use crate::oracle::{self, AttentionInstance, CountingAccess};
use crate::qsim::{derive_seed, rng_from_seed, CostLedger, MeanEstimatorConfig};
use crate::rownorm::{self, RowNormSketch};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QAttentionConfig {
    pub lambda: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub mean: MeanEstimatorConfig,
    pub amm: AmmOptions,
    /// Overrides the default Nyström settings (its seed is still derived).
    pub nystrom: Option<NystromConfig>,
    /// Draw separate landmark sets for the normalizer and the sketch.
    pub strict_two_calls: bool,
}

impl QAttentionConfig {
    pub fn new(lambda: f64, epsilon: f64, mean: MeanEstimatorConfig, seed: u64) -> Self {
        Self {
            lambda,
            epsilon,
            seed,
            mean: MeanEstimatorConfig { epsilon, ..mean },
            amm: AmmOptions::default(),
            nystrom: None,
            strict_two_calls: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AttentionSketch {
    s_e: WeightedSampleSet,
    amm: AmmSketch,
    m_tilde: DenseMatrix,
    r_tilde: DenseMatrix,
    n_tilde: DenseMatrix,
    l_tilde: DenseMatrix,
    rownorm: RowNormSketch,
    lambda: f64,
    epsilon: f64,
}

pub fn preprocess(
    inst: Arc<AttentionInstance>,
    cfg: &QAttentionConfig,
    ledger: &CostLedger,
) -> Result<AttentionSketch> {
    inst.require_scaled()?;
    let ny = nystrom_config(&inst, cfg, 1)?;
    let access = CountingAccess::new(&inst, ledger);
    let s_e = nystrom::qnystrom(&access, &ny, ledger)?;
    let mean = MeanEstimatorConfig {
        epsilon: cfg.epsilon,
        ..cfg.mean
    };
    let rn = if cfg.strict_two_calls {
        let ny2 = nystrom_config(&inst, cfg, 2)?;
        rownorm::preprocess_with(inst.clone(), &ny2, cfg.epsilon, &mean, ledger)?
    } else {
        rownorm::from_sample(inst.clone(), s_e.clone(), cfg.lambda, cfg.epsilon, &mean, ledger)?
    };
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 3));
    let amm = amm::build(&access.values(), cfg.epsilon, &cfg.amm, &mut rng, ledger)?;
    assemble(&access, s_e, amm, rn, cfg.lambda, cfg.epsilon)
}

fn nystrom_config(inst: &AttentionInstance, cfg: &QAttentionConfig, stream: u64) -> Result<NystromConfig> {
    let seed = derive_seed(cfg.seed, stream);
    match cfg.nystrom {
        Some(mut ny) => {
            ny.seed = seed;
            if ny.stat_dim.is_none() {
                ny.stat_dim = Some(oracle::instance_statistical_dimension(inst, ny.lambda)?);
            }
            Ok(ny)
        }
        None => rownorm::default_nystrom_config(inst, cfg.lambda, seed),
    }
}

/// Builds the sketch on given landmark (`S_E`, over `2n`) and value
/// (`S_V`, over `n`) samples.
pub fn preprocess_from_samples(
    inst: Arc<AttentionInstance>,
    s_e: WeightedSampleSet,
    s_v: WeightedSampleSet,
    lambda: f64,
    mean: &MeanEstimatorConfig,
    ledger: &CostLedger,
) -> Result<AttentionSketch> {
    inst.require_scaled()?;
    let n = inst.n();
    if s_e.source_size() != 2 * n || s_v.source_size() != n {
        return Err(Error::Dimension(format!(
            "S_E over {} (want {}), S_V over {} (want {n})",
            s_e.source_size(),
            2 * n,
            s_v.source_size()
        )));
    }
    let access = CountingAccess::new(&inst, ledger);
    let rn = rownorm::from_sample(inst.clone(), s_e.clone(), lambda, mean.epsilon, mean, ledger)?;
    let v_tilde = DenseMatrix::from_rows(
        &s_v.iter()
            .map(|smp| access.value_row(smp.index).iter().map(|x| x * smp.weight).collect())
            .collect::<Vec<Vec<f64>>>(),
    )
    .unwrap_or_else(|_| DenseMatrix::zeros(0, inst.d()));
    let amm = AmmSketch {
        s_target: s_v.len(),
        probabilities: Vec::new(),
        sample: s_v,
        v_tilde,
        alpha: f64::NAN,
        epsilon: mean.epsilon,
    };
    assemble(&access, s_e, amm, rn, lambda, mean.epsilon)
}

fn assemble(
    access: &CountingAccess<'_>,
    s_e: WeightedSampleSet,
    amm: AmmSketch,
    rownorm: RowNormSketch,
    lambda: f64,
    epsilon: f64,
) -> Result<AttentionSketch> {
    let n = access.n();
    let m_tilde = nystrom::weighted_gram(access, &s_e)?;
    let sv = amm.sample.samples();
    let mut r_tilde = DenseMatrix::zeros(s_e.len(), sv.len());
    for (a, pe) in s_e.iter().enumerate() {
        for (b, pv) in sv.iter().enumerate() {
            r_tilde.set(a, b, pe.weight * pv.weight * access.eval(pe.index, n + pv.index)?);
        }
    }
    access
        .ledger()
        .charge_modeled("landmark_reads", (s_e.len() + sv.len()) as f64);
    let n_tilde = linalg::pseudo_inverse(&m_tilde, DEFAULT_REL_TOL).matmul(&r_tilde);
    let l_tilde = n_tilde.matmul(&amm.v_tilde);
    if l_tilde.shape() != (s_e.len(), access.d()) {
        return Err(Error::Internal(format!(
            "L̃ has shape {:?}, expected ({}, {})",
            l_tilde.shape(),
            s_e.len(),
            access.d()
        )));
    }
    Ok(AttentionSketch {
        s_e,
        amm,
        m_tilde,
        r_tilde,
        n_tilde,
        l_tilde,
        rownorm,
        lambda,
        epsilon,
    })
}

impl AttentionSketch {
    pub fn s_e(&self) -> usize {
        self.s_e.len()
    }

    pub fn s_v(&self) -> usize {
        self.amm.sample.len()
    }

    pub fn landmarks(&self) -> &WeightedSampleSet {
        &self.s_e
    }

    pub fn amm(&self) -> &AmmSketch {
        &self.amm
    }

    pub fn m_tilde(&self) -> &DenseMatrix {
        &self.m_tilde
    }

    pub fn r_tilde(&self) -> &DenseMatrix {
        &self.r_tilde
    }

    pub fn n_tilde(&self) -> &DenseMatrix {
        &self.n_tilde
    }

    pub fn l_tilde(&self) -> &DenseMatrix {
        &self.l_tilde
    }

    pub fn rownorm(&self) -> &RowNormSketch {
        &self.rownorm
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn instance(&self) -> &AttentionInstance {
        self.rownorm.instance()
    }

    /// `L̃ᵀu_i / b_i`.
    pub fn query(&self, i: usize) -> Result<Vector> {
        let b = self.rownorm.query(i)?;
        if !(b > 0.0) {
            return Err(Error::DegenerateNormalizer { row: i, value: b });
        }
        let inst = self.instance();
        let u: Vec<f64> = self
            .s_e
            .iter()
            .map(|smp| Ok(smp.weight * inst.eval(i, smp.index)?))
            .collect::<Result<_>>()?;
        Vector::new(self.l_tilde.tr_matvec(&u).iter().map(|x| x / b).collect())
    }

    pub fn query_all(&self) -> Result<DenseMatrix> {
        let n = self.instance().n();
        let rows: Vec<Vec<f64>> = (0..n).map(|i| Ok(self.query(i)?.into_inner())).collect::<Result<_>>()?;
        DenseMatrix::from_rows(&rows)
    }

    /// `D̃⁻¹ Ã S_V S_Vᵀ V` from dense matrices, independent of the compact
    /// query path.
    pub fn dense_replay(&self) -> Result<DenseMatrix> {
        let inst = self.instance();
        let n = inst.n();
        let e = oracle::kernel_matrix(inst)?;
        let se = self.s_e.materialize();
        let sv = self.amm.sample.materialize();
        let es = e.matmul(&se);
        let core = linalg::pseudo_inverse(&se.transpose().matmul(&es), DEFAULT_REL_TOL);
        let top = es.block(0, 0, n, se.cols());
        let bottom = es.block(n, 0, n, se.cols());
        let tilde_a = top.matmul(&core).matmul(&bottom.transpose());
        let v_prime = sv.matmul(&sv.transpose()).matmul(inst.v());
        let b = self.rownorm.query_all()?;
        let mut out = tilde_a.matmul(&v_prime);
        for i in 0..n {
            if !(b[i] > 0.0) {
                return Err(Error::DegenerateNormalizer { row: i, value: b[i] });
            }
            for c in 0..inst.d() {
                out.set(i, c, out.get(i, c) / b[i]);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub beta: f64,
    pub assumption_ok: bool,
    pub rhs: f64,
    pub lhs: Option<f64>,
    pub norm_d_inv: f64,
    pub norm_a: f64,
    pub norm_a_fro: f64,
    pub norm_v_fro: f64,
}

/// Bound arithmetic from precomputed norms. `lhs` is left unset.
pub fn bound_from_norms(
    norm_d_inv: f64,
    epsilon: f64,
    lambda: f64,
    n: usize,
    norm_a: f64,
    norm_a_fro: f64,
    norm_v_fro: f64,
) -> BoundReport {
    let lsn = lambda * (n as f64).sqrt();
    let slack = (epsilon * norm_a + lsn) * norm_d_inv;
    let assumption_ok = slack < 1.0;
    let beta = if assumption_ok { 1.0 / (1.0 - slack) } else { f64::INFINITY };
    BoundReport {
        beta,
        assumption_ok,
        rhs: epsilon * beta * norm_d_inv * (norm_a_fro + lsn) * norm_v_fro,
        lhs: None,
        norm_d_inv,
        norm_a,
        norm_a_fro,
        norm_v_fro,
    }
}

/// Evaluates the Frobenius error bound against the exact attention output.
pub fn main_bound(inst: &AttentionInstance, sk: &AttentionSketch, epsilon: f64, lambda: f64) -> Result<BoundReport> {
    let a = oracle::attention_matrix(inst)?;
    let d = oracle::normalization_exact(inst)?;
    let norm_d_inv = d.iter().map(|x| 1.0 / x).fold(0.0, f64::max);
    let norms = linalg::norms(&a);
    let mut report = bound_from_norms(
        norm_d_inv,
        epsilon,
        lambda,
        inst.n(),
        norms.spectral,
        norms.frobenius,
        inst.v().frobenius_norm(),
    );
    let exact = oracle::attention_exact(inst)?;
    report.lhs = Some(sk.dense_replay()?.sub(&exact).frobenius_norm());
    Ok(report)
}

/// `‖D⁻¹‖/(1 − ε‖D⁻¹‖)`.
pub fn inverse_perturb_bound(norm_d_inv: f64, eps_pert: f64) -> Result<f64> {
    if !(norm_d_inv >= 0.0 && eps_pert >= 0.0) || eps_pert * norm_d_inv >= 1.0 {
        return Err(Error::Parameter(format!(
            "need ε·‖D⁻¹‖ < 1, got ε = {eps_pert}, ‖D⁻¹‖ = {norm_d_inv}"
        )));
    }
    Ok(norm_d_inv / (1.0 - eps_pert * norm_d_inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qsim::MeanBackend;
    use crate::test_support::gaussian;

    fn instance(n: usize, d: usize, seed: u64) -> Arc<AttentionInstance> {
        Arc::new(
            AttentionInstance::new(gaussian(n, d, seed), gaussian(n, d, seed + 1), gaussian(n, d, seed + 2))
                .unwrap()
                .scale_qk()
                .unwrap(),
        )
    }

    fn full(inst: &Arc<AttentionInstance>) -> AttentionSketch {
        let n = inst.n();
        preprocess_from_samples(
            inst.clone(),
            WeightedSampleSet::full(2 * n),
            WeightedSampleSet::full(n),
            0.5,
            &MeanEstimatorConfig::exact(0.1),
            &CostLedger::new(),
        )
        .unwrap()
    }

    #[test]
    fn full_sampling_reproduces_attention() {
        let x = instance(2, 3, 1);
        let out = full(&x).query_all().unwrap();
        let exact = oracle::attention_exact(&x).unwrap();
        assert!(out.sub(&exact).frobenius_norm() <= 1e-6 * exact.frobenius_norm());
    }

    #[test]
    fn single_row_returns_v() {
        let x = instance(1, 3, 4);
        let cfg = QAttentionConfig::new(0.5, 0.1, MeanEstimatorConfig::exact(0.1), 0);
        let sk = preprocess(x.clone(), &cfg, &CostLedger::new()).unwrap();
        let r = sk.query(0).unwrap();
        for c in 0..3 {
            assert!((r[c] - x.v().get(0, c)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_qk_gives_column_mean() {
        let n = 5;
        let v = gaussian(n, 2, 3);
        let x = Arc::new(AttentionInstance::new_scaled(DenseMatrix::zeros(n, 2), DenseMatrix::zeros(n, 2), v.clone()).unwrap());
        let sk = full(&x);
        for i in 0..n {
            let r = sk.query(i).unwrap();
            for c in 0..2 {
                let mean = v.column(c).iter().sum::<f64>() / n as f64;
                assert!((r[c] - mean).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn query_matches_dense_replay() {
        let x = instance(32, 4, 6);
        let cfg = QAttentionConfig::new(0.5, 0.2, MeanEstimatorConfig::new(MeanBackend::Perturbed, 0.2, 3).unwrap(), 11);
        let sk = preprocess(x.clone(), &cfg, &CostLedger::new()).unwrap();
        let compact = sk.query_all().unwrap();
        let dense = sk.dense_replay().unwrap();
        assert!(compact.sub(&dense).frobenius_norm() <= 1e-8 * dense.frobenius_norm());
        assert!(sk.l_tilde().sub(&sk.n_tilde().matmul(&sk.amm().v_tilde)).max_abs() < 1e-10 * sk.l_tilde().max_abs().max(1.0));
    }

    #[test]
    fn strict_mode_uses_separate_landmarks() {
        let x = instance(64, 4, 7);
        let mut cfg = QAttentionConfig::new(0.25, 0.2, MeanEstimatorConfig::exact(0.2), 5);
        cfg.strict_two_calls = true;
        let mut ny = rownorm::default_nystrom_config(&x, 0.25, 0).unwrap().with_stat_dim(3.0);
        ny.sample_cap_factor = 1.0;
        ny.oversample_q_constant = 0.1;
        cfg.nystrom = Some(ny);
        let sk = preprocess(x, &cfg, &CostLedger::new()).unwrap();
        assert_ne!(sk.landmarks(), sk.rownorm().sample());
    }

    #[test]
    fn preprocess_reads_through_counting_accessors() {
        let x = instance(16, 2, 8);
        let ledger = CostLedger::new();
        let cfg = QAttentionConfig::new(0.5, 0.2, MeanEstimatorConfig::exact(0.2), 1);
        preprocess(x, &cfg, &ledger).unwrap();
        let snap = ledger.snapshot();
        assert!(snap.classical_row_queries_qk > 0);
        assert!(snap.classical_row_queries_v >= 16);
        assert!(snap.kernel_evals > 0);
        for key in ["qleverage", "qmatvec", "landmark_reads"] {
            assert!(snap.modeled_breakdown.contains_key(key), "{key}");
        }
    }

    #[test]
    fn bound_arithmetic() {
        // ‖D⁻¹‖ = 0.1, ε = 0.1, ‖A‖ = 5, λ√n = 0.2
        let r = bound_from_norms(0.1, 0.1, 0.05, 16, 5.0, 6.0, 2.0);
        assert!((r.beta - 1.0 / 0.93).abs() < 1e-12);
        assert!((r.beta - 1.075268817).abs() < 1e-9);
        assert!(r.assumption_ok);
        assert!((r.rhs - 0.1 * r.beta * 0.1 * 6.2 * 2.0).abs() < 1e-12);
        let bad = bound_from_norms(1.0, 0.5, 0.25, 16, 2.0, 2.0, 1.0);
        assert!(!bad.assumption_ok && bad.beta.is_infinite());
    }

    #[test]
    fn inverse_perturb_examples() {
        assert_eq!(inverse_perturb_bound(1.0, 0.5).unwrap(), 2.0);
        assert_eq!(inverse_perturb_bound(0.3, 0.0).unwrap(), 0.3);
        assert!(inverse_perturb_bound(2.0, 0.5).is_err());
    }

    #[test]
    fn degenerate_normalizer_is_an_error() {
        let x = instance(4, 2, 9);
        let rn = rownorm::from_sample_with_vector(
            x.clone(),
            WeightedSampleSet::full(8),
            &[-1.0; 4],
            0.5,
            0.1,
            &MeanEstimatorConfig::exact(0.1),
            &CostLedger::new(),
        )
        .unwrap();
        let ledger = CostLedger::new();
        let access = CountingAccess::new(&x, &ledger);
        let sk = full(&x);
        let broken = assemble(&access, WeightedSampleSet::full(8), sk.amm().clone(), rn, 0.5, 0.1).unwrap();
        assert!(matches!(broken.query(0), Err(Error::DegenerateNormalizer { row: 0, .. })));
    }
}
