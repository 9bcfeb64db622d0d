use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::ledger::{polylog, CostLedger};
use super::rng::{derive_seed, rng_from_seed};
use super::RowOracle;
use crate::error::{Error, Result};
use crate::linalg::{self, dot, DenseMatrix, Vector, DEFAULT_REL_TOL};

/// Retries allowed after the first Monte Carlo attempt misses the contract.
pub const MAX_MC_RETRIES: u32 = 16;

/// Relative slack on the energy-norm contract for rounding.
const CONTRACT_SLACK: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeanBackend {
    Exact,
    Perturbed,
    MonteCarlo,
}

impl std::str::FromStr for MeanBackend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "perturbed" => Ok(Self::Perturbed),
            "mc" | "monte_carlo" | "montecarlo" => Ok(Self::MonteCarlo),
            other => Err(Error::Parameter(format!("unknown mean backend {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimatorConfig {
    pub backend: MeanBackend,
    pub epsilon: f64,
    pub seed: u64,
    /// Monte Carlo draws are `⌈mc_sample_factor · s / ε²⌉`.
    pub mc_sample_factor: f64,
}

impl MeanEstimatorConfig {
    pub const DEFAULT_MC_SAMPLE_FACTOR: f64 = 4.0;

    pub fn new(backend: MeanBackend, epsilon: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            backend,
            epsilon,
            seed,
            mc_sample_factor: Self::DEFAULT_MC_SAMPLE_FACTOR,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn exact(epsilon: f64) -> Self {
        Self::new(MeanBackend::Exact, epsilon, 0).expect("valid epsilon")
    }

    pub fn with_mc_sample_factor(mut self, factor: f64) -> Result<Self> {
        self.mc_sample_factor = factor;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Parameter(format!(
                "mean-estimation epsilon must lie in (0, 1), got {}",
                self.epsilon
            )));
        }
        if !(self.mc_sample_factor > 0.0 && self.mc_sample_factor.is_finite()) {
            return Err(Error::Parameter(format!(
                "mc_sample_factor must be positive, got {}",
                self.mc_sample_factor
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MeanEstimate {
    pub mu: Vector,
    /// `‖μ̃ − Uᵀv‖` in the `(UᵀU)†` energy norm, as verified.
    pub energy_error: f64,
    pub attempts: u32,
}

/// `⌈ε⁻¹·√(n·s)·‖v‖_∞⌉ · log₂(n+2)`.
pub fn qmatvec_cost(n: usize, s: usize, epsilon: f64, v_inf: f64) -> f64 {
    ((n as f64 * s as f64).sqrt() * v_inf / epsilon).ceil() * polylog(n)
}

/// `√(xᵀ G† x)`, clamped at zero.
pub fn energy_norm(x: &[f64], gram_pinv: &DenseMatrix) -> f64 {
    dot(x, &gram_pinv.matvec(x)).max(0.0).sqrt()
}

/// Estimate of `Uᵀv` for an `n×s` row oracle `U`, with the energy-norm
/// contract `‖μ̃ − Uᵀv‖_{(UᵀU)†} ≤ ε` checked on every call.
pub fn qmatvec(
    u: &impl RowOracle,
    v: &[f64],
    cfg: &MeanEstimatorConfig,
    ledger: &CostLedger,
) -> Result<MeanEstimate> {
    cfg.validate()?;
    let (n, s) = (u.len(), u.dim());
    if v.len() != n {
        return Err(Error::Dimension(format!(
            "qmatvec vector has length {}, oracle has {n} rows",
            v.len()
        )));
    }
    let v_inf = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if v_inf > 1.0 + 1e-12 {
        return Err(Error::Parameter(format!("qmatvec requires ‖v‖_∞ ≤ 1, got {v_inf}")));
    }
    let rows: Vec<Vec<f64>> = (0..n).map(|i| u.row(i)).collect::<Result<_>>()?;
    let u_dense = DenseMatrix::from_rows(&rows)
        .unwrap_or_else(|_| DenseMatrix::zeros(n, s));
    let exact = u_dense.tr_matvec(v);
    let gram = u_dense.transpose().matmul(&u_dense).symmetrize();
    let (values, vectors) = linalg::symmetric_eigen(&gram);
    let cutoff = DEFAULT_REL_TOL * values.first().copied().unwrap_or(0.0);
    let inv: Vec<f64> = values.iter().map(|&l| if l > cutoff && l > 0.0 { 1.0 / l } else { 0.0 }).collect();
    let gram_pinv = linalg::spectral_reassemble(&vectors, &inv);
    let check = |mu: &[f64]| -> f64 {
        let r: Vec<f64> = mu.iter().zip(&exact).map(|(a, b)| a - b).collect();
        energy_norm(&r, &gram_pinv)
    };
    let limit = cfg.epsilon * (1.0 + CONTRACT_SLACK);

    ledger.charge_modeled("qmatvec", qmatvec_cost(n, s, cfg.epsilon, v_inf));

    let (mu, attempts) = match cfg.backend {
        MeanBackend::Exact => (exact.clone(), 1),
        MeanBackend::Perturbed => (perturb(&exact, &values, &vectors, cfg), 1),
        MeanBackend::MonteCarlo => {
            let mut last = f64::INFINITY;
            let mut accepted = None;
            for attempt in 0..=MAX_MC_RETRIES {
                let mu = monte_carlo(&rows, v, s, cfg, attempt);
                last = check(&mu);
                if last <= limit {
                    accepted = Some((mu, attempt + 1));
                    break;
                }
            }
            accepted.ok_or(Error::Estimation {
                achieved: last,
                target: cfg.epsilon,
            })?
        }
    };
    let energy_error = check(&mu);
    if energy_error > limit {
        return Err(Error::Estimation {
            achieved: energy_error,
            target: cfg.epsilon,
        });
    }
    Ok(MeanEstimate {
        mu: Vector::new(mu)?,
        energy_error,
        attempts,
    })
}

/// `Uᵀv + z` with `‖z‖_{G†} = ε`: a uniform direction in the whitened range
/// of `G`, mapped back through `G^{1/2}`.
fn perturb(exact: &[f64], values: &[f64], vectors: &DenseMatrix, cfg: &MeanEstimatorConfig) -> Vec<f64> {
    let cutoff = DEFAULT_REL_TOL * values.first().copied().unwrap_or(0.0);
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x7075_7274));
    let s = exact.len();
    let mut z = vec![0.0; s];
    let mut norm2 = 0.0;
    for (k, &lam) in values.iter().enumerate() {
        let w: f64 = StandardNormal.sample(&mut rng);
        if lam <= cutoff || lam <= 0.0 {
            continue;
        }
        norm2 += w * w;
        let a = lam.sqrt() * w;
        for (j, zj) in z.iter_mut().enumerate() {
            *zj += a * vectors.get(j, k);
        }
    }
    if norm2 == 0.0 {
        return exact.to_vec();
    }
    let scale = cfg.epsilon / norm2.sqrt();
    exact.iter().zip(&z).map(|(e, zj)| e + scale * zj).collect()
}

/// Mean of `m` draws of `n·v_i·U_i` with `i` uniform, accumulated through
/// per-index draw counts.
fn monte_carlo(
    rows: &[Vec<f64>],
    v: &[f64],
    s: usize,
    cfg: &MeanEstimatorConfig,
    attempt: u32,
) -> Vec<f64> {
    let n = rows.len();
    let m = (cfg.mc_sample_factor * s.max(1) as f64 / cfg.epsilon.powi(2)).ceil() as u64;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 0x6d63_0000 + attempt as u64));
    let mut counts = vec![0u64; n];
    for _ in 0..m {
        counts[rng.random_range(0..n)] += 1;
    }
    let mut mu = vec![0.0; s];
    let scale = n as f64 / m as f64;
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 || v[i] == 0.0 {
            continue;
        }
        let a = scale * c as f64 * v[i];
        for (acc, &x) in mu.iter_mut().zip(&rows[i]) {
            *acc += a * x;
        }
    }
    mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::gaussian;

    fn dense_energy_error(u: &DenseMatrix, v: &[f64], mu: &[f64]) -> f64 {
        let g = u.transpose().matmul(u);
        let exact = u.tr_matvec(v);
        let r: Vec<f64> = mu.iter().zip(&exact).map(|(a, b)| a - b).collect();
        energy_norm(&r, &linalg::pseudo_inverse(&g, 1e-12))
    }

    #[test]
    fn exact_backend_returns_product() {
        let u = gaussian(10, 3, 1);
        let v: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -0.5 }).collect();
        let ledger = CostLedger::new();
        let out = qmatvec(&u, &v, &MeanEstimatorConfig::exact(0.1), &ledger).unwrap();
        assert_eq!(out.mu.as_slice(), u.tr_matvec(&v).as_slice());
        assert_eq!(out.energy_error, 0.0);
        assert_eq!(ledger.modeled_quantum_queries(), qmatvec_cost(10, 3, 0.1, 1.0));
    }

    #[test]
    fn perturbed_identity_has_euclidean_error_epsilon() {
        let u = DenseMatrix::identity(4);
        let cfg = MeanEstimatorConfig::new(MeanBackend::Perturbed, 0.1, 5).unwrap();
        let out = qmatvec(&u, &[1.0; 4], &cfg, &CostLedger::new()).unwrap();
        let r: f64 = out.mu.iter().map(|m| (m - 1.0).powi(2)).sum::<f64>().sqrt();
        assert!((r - 0.1).abs() < 1e-14, "{r}");
    }

    #[test]
    fn perturbed_sits_on_the_contract_boundary() {
        let u = gaussian(40, 5, 2);
        let cfg = MeanEstimatorConfig::new(MeanBackend::Perturbed, 0.2, 11).unwrap();
        let out = qmatvec(&u, &vec![1.0; 40], &cfg, &CostLedger::new()).unwrap();
        let e = dense_energy_error(&u, &[1.0; 40], &out.mu);
        assert!((e - 0.2).abs() < 1e-9, "{e}");
    }

    #[test]
    fn monte_carlo_meets_contract() {
        let u = gaussian(64, 4, 3);
        let cfg = MeanEstimatorConfig::new(MeanBackend::MonteCarlo, 0.3, 7)
            .unwrap()
            .with_mc_sample_factor(128.0)
            .unwrap();
        let v = vec![1.0; 64];
        let out = qmatvec(&u, &v, &cfg, &CostLedger::new()).unwrap();
        let e = dense_energy_error(&u, &v, &out.mu);
        assert!(e <= 0.3, "{e}");
        assert!((e - out.energy_error).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_reports_failure_when_underpowered() {
        let u = gaussian(200, 4, 3);
        let cfg = MeanEstimatorConfig::new(MeanBackend::MonteCarlo, 0.01, 7)
            .unwrap()
            .with_mc_sample_factor(1e-4)
            .unwrap();
        match qmatvec(&u, &vec![1.0; 200], &cfg, &CostLedger::new()) {
            Err(Error::Estimation { achieved, target }) => {
                assert!(achieved > target);
                assert_eq!(target, 0.01);
            }
            other => panic!("expected estimation error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_large_entries_and_bad_lengths() {
        let u = gaussian(5, 2, 0);
        let cfg = MeanEstimatorConfig::exact(0.1);
        assert!(matches!(qmatvec(&u, &[2.0; 5], &cfg, &CostLedger::new()), Err(Error::Parameter(_))));
        assert!(matches!(qmatvec(&u, &[1.0; 4], &cfg, &CostLedger::new()), Err(Error::Dimension(_))));
        assert!(MeanEstimatorConfig::new(MeanBackend::Exact, 1.0, 0).is_err());
    }

    #[test]
    fn rank_deficient_oracle_uses_range_only() {
        let col = gaussian(12, 1, 4);
        let u = DenseMatrix::from_fn(12, 3, |i, j| if j == 2 { 0.0 } else { col.get(i, 0) * (j + 1) as f64 });
        let cfg = MeanEstimatorConfig::new(MeanBackend::Perturbed, 0.5, 1).unwrap();
        let out = qmatvec(&u, &vec![1.0; 12], &cfg, &CostLedger::new()).unwrap();
        assert!(out.mu[2].abs() < 1e-12);
        assert!((dense_energy_error(&u, &[1.0; 12], &out.mu) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn backend_parsing() {
        assert_eq!("mc".parse::<MeanBackend>().unwrap(), MeanBackend::MonteCarlo);
        assert_eq!("exact".parse::<MeanBackend>().unwrap(), MeanBackend::Exact);
        assert!("quantum".parse::<MeanBackend>().is_err());
    }
}
