//! Synthetic instances and the experiment configuration that produces them.

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::io;
use crate::amm::AmmOptions;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nystrom::NystromConfig;
use crate::oracle::AttentionInstance;
use crate::qattention::QAttentionConfig;
use crate::qsim::{derive_seed, rng_from_seed, MeanEstimatorConfig, SimRng};
use crate::rownorm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    Gaussian,
    /// Every row of `Q` and `K` is a random center plus `spread`·noise.
    Clustered { k: usize, spread: f64 },
    /// Gaussian `Q`, `K` with orthonormal-column `V`.
    OrthonormalV,
    FromFiles {
        q: PathBuf,
        k: PathBuf,
        v: PathBuf,
        /// `Q` and `K` already carry the `d^{-1/4}` factor.
        #[serde(default)]
        prescaled: bool,
    },
}

/// Free constants of the sketching pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub sample_cap_factor: f64,
    pub oversample_q_constant: f64,
    pub q_scale_constant: f64,
    pub amm: AmmOptions,
    pub strict_two_calls: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            sample_cap_factor: 4.0,
            oversample_q_constant: 16.0,
            q_scale_constant: 5.0,
            amm: AmmOptions::default(),
            strict_two_calls: false,
        }
    }
}

impl PipelineOptions {
    /// Smaller Nyström constants under which the landmark sampler actually
    /// subsamples at a few hundred points.
    pub fn reduced() -> Self {
        Self {
            sample_cap_factor: 1.0,
            oversample_q_constant: 0.5,
            q_scale_constant: 1.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub d: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub generator: Generator,
    pub backend: MeanEstimatorConfig,
    pub trials: usize,
    #[serde(default)]
    pub pipeline: PipelineOptions,
}

impl ExperimentConfig {
    pub fn new(n: usize, d: usize, lambda: f64, epsilon: f64, seed: u64, generator: Generator) -> Result<Self> {
        let backend = MeanEstimatorConfig::new(crate::MeanBackend::Exact, epsilon, seed)?;
        let cfg = Self {
            n,
            d,
            lambda,
            epsilon,
            seed,
            generator,
            backend,
            trials: 1,
            pipeline: PipelineOptions::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::Parameter(format!("n and d must be positive, got n = {}, d = {}", self.n, self.d)));
        }
        if self.trials == 0 {
            return Err(Error::Parameter("trials must be at least 1".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        match self.generator {
            Generator::Clustered { k, spread } if k == 0 || !(spread >= 0.0 && spread.is_finite()) => {
                return Err(Error::Parameter(format!("clustered generator needs k ≥ 1 and spread ≥ 0, got k = {k}, spread = {spread}")));
            }
            Generator::OrthonormalV if self.n < self.d => {
                return Err(Error::Parameter(format!("orthonormal V needs n ≥ d, got {}×{}", self.n, self.d)));
            }
            _ => {}
        }
        self.backend.validate()
    }

    /// Seed for trial `t`.
    pub fn trial_seed(&self, t: usize) -> u64 {
        self.seed.wrapping_add(t as u64)
    }

    /// Copy with `n` and `seed` replaced.
    pub fn with_n_seed(&self, n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            ..self.clone()
        }
    }

    /// Pipeline configuration for `inst`; computes `s_λ` outside any ledger.
    pub fn qattention_config(&self, inst: &AttentionInstance) -> Result<QAttentionConfig> {
        let mean = MeanEstimatorConfig {
            seed: self.seed,
            ..self.backend
        };
        let mut cfg = QAttentionConfig::new(self.lambda, self.epsilon, mean, self.seed);
        let mut ny: NystromConfig = rownorm::default_nystrom_config(inst, self.lambda, 0)?;
        ny.sample_cap_factor = self.pipeline.sample_cap_factor;
        ny.oversample_q_constant = self.pipeline.oversample_q_constant;
        ny.q_scale_constant = self.pipeline.q_scale_constant;
        ny.validate()?;
        cfg.nystrom = Some(ny);
        cfg.amm = self.pipeline.amm;
        cfg.strict_two_calls = self.pipeline.strict_two_calls;
        Ok(cfg)
    }
}

/// Entries with variance `1/√d`.
fn gaussian_block(rng: &mut SimRng, rows: usize, cols: usize) -> DenseMatrix {
    let sd = (cols as f64).powf(-0.25);
    DenseMatrix::from_fn(rows, cols, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

fn orthonormal(rng: &mut SimRng, rows: usize, cols: usize) -> DenseMatrix {
    let g = DenseMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.to_nalgebra().qr().q();
    DenseMatrix::from_nalgebra(&DMatrix::from_fn(rows, cols, |i, j| q[(i, j)]))
}

pub fn generate(cfg: &ExperimentConfig) -> Result<AttentionInstance> {
    match cfg.generator {
        Generator::FromFiles { prescaled: true, .. } => generate_unscaled(cfg),
        _ => generate_unscaled(cfg)?.scale_qk(),
    }
}

/// The instance before the `d^{-1/4}` factor is applied to `Q` and `K`
/// (unless the files are marked prescaled).
pub fn generate_unscaled(cfg: &ExperimentConfig) -> Result<AttentionInstance> {
    cfg.validate()?;
    let (n, d) = (cfg.n, cfg.d);
    let stream = |s: u64| rng_from_seed(derive_seed(cfg.seed, 0x6765_6e00 + s));
    let inst = match &cfg.generator {
        Generator::Gaussian => AttentionInstance::new(
            gaussian_block(&mut stream(0), n, d),
            gaussian_block(&mut stream(1), n, d),
            gaussian_block(&mut stream(2), n, d),
        )?,
        Generator::Clustered { k, spread } => {
            let mut rng = stream(3);
            let centers = gaussian_block(&mut rng, *k, d);
            let clustered = |rng: &mut SimRng| {
                let mut m = DenseMatrix::zeros(n, d);
                for i in 0..n {
                    let c = rng.random_range(0..*k);
                    for j in 0..d {
                        let noise: f64 = rng.sample(StandardNormal);
                        m.set(i, j, centers.get(c, j) + spread * noise);
                    }
                }
                m
            };
            let q = clustered(&mut rng);
            let kk = clustered(&mut rng);
            AttentionInstance::new(q, kk, gaussian_block(&mut stream(2), n, d))?
        }
        Generator::OrthonormalV => AttentionInstance::new(
            gaussian_block(&mut stream(0), n, d),
            gaussian_block(&mut stream(1), n, d),
            orthonormal(&mut stream(4), n, d),
        )?,
        Generator::FromFiles { q, k, v, prescaled } => {
            let (q, k, v) = (io::load_matrix(q)?, io::load_matrix(k)?, io::load_matrix(v)?);
            let inst = if *prescaled {
                AttentionInstance::new_scaled(q, k, v)?
            } else {
                AttentionInstance::new(q, k, v)?
            };
            return Ok(inst);
        }
    };
    Ok(inst)
}
