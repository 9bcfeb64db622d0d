//! Instance statistics and the landmark-system condition diagnostic.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{self, WeightedSampleSet};
use crate::oracle::{self, AttentionInstance};

/// Default Markov constant of the condition bound.
pub const CONDITION_MARKOV_CONSTANT: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceMetrics {
    /// `1/(‖D⁻¹‖·‖A‖)`.
    pub eps_max: f64,
    #[serde(rename = "ratio_AF_over_A")]
    pub ratio_af_over_a: f64,
    #[serde(rename = "ratio_VF_over_V")]
    pub ratio_vf_over_v: f64,
    #[serde(rename = "d_over_srankV")]
    pub d_over_srank_v: f64,
    #[serde(rename = "ratio_Ainf_over_A")]
    pub ratio_ainf_over_a: f64,
}

/// Flat means over all trials or matrices, with the per-trial values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub eps_max: f64,
    #[serde(rename = "ratio_AF_over_A")]
    pub ratio_af_over_a: f64,
    #[serde(rename = "ratio_VF_over_V")]
    pub ratio_vf_over_v: f64,
    #[serde(rename = "d_over_srankV")]
    pub d_over_srank_v: f64,
    #[serde(rename = "ratio_Ainf_over_A")]
    pub ratio_ainf_over_a: f64,
    pub trials: Vec<InstanceMetrics>,
}

pub fn metrics(inst: &AttentionInstance) -> Result<InstanceMetrics> {
    let a = oracle::attention_matrix(inst)?;
    let d = oracle::normalization_exact(inst)?;
    let norm_d_inv = d.iter().map(|x| 1.0 / x).fold(0.0, f64::max);
    let an = linalg::norms(&a);
    let v_spec = linalg::spectral_norm(inst.v());
    Ok(InstanceMetrics {
        eps_max: 1.0 / (norm_d_inv * an.spectral),
        ratio_af_over_a: an.frobenius / an.spectral,
        ratio_vf_over_v: inst.v().frobenius_norm() / v_spec,
        d_over_srank_v: inst.d() as f64 / linalg::stable_rank(inst.v())?,
        ratio_ainf_over_a: an.inf_row_l1 / an.spectral,
    })
}

pub fn aggregate(trials: Vec<InstanceMetrics>) -> MetricsReport {
    let k = trials.len().max(1) as f64;
    let mean = |f: fn(&InstanceMetrics) -> f64| trials.iter().map(f).sum::<f64>() / k;
    MetricsReport {
        eps_max: mean(|m| m.eps_max),
        ratio_af_over_a: mean(|m| m.ratio_af_over_a),
        ratio_vf_over_v: mean(|m| m.ratio_vf_over_v),
        d_over_srank_v: mean(|m| m.d_over_srank_v),
        ratio_ainf_over_a: mean(|m| m.ratio_ainf_over_a),
        trials,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionDiag {
    pub log_kappa_actual: f64,
    pub log_kappa_bound: f64,
}

impl ConditionDiag {
    pub fn holds(&self) -> bool {
        self.log_kappa_actual <= self.log_kappa_bound
    }
}

/// `ln κ(SᵀES + λI)` against `R_max + ln(N/λ) + ln(C·N)`, where `N = 2n`
/// is the number of kernel points and `R_max` the largest squared row norm
/// over the scaled `Q ∪ K`.
pub fn condition_diag(inst: &AttentionInstance, s_e: &WeightedSampleSet, lambda: f64) -> Result<ConditionDiag> {
    let e = oracle::kernel_matrix(inst)?;
    let r_max = (0..2 * inst.n())
        .map(|j| inst.point(j).iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    condition_diag_kernel(&e, s_e, lambda, r_max, CONDITION_MARKOV_CONSTANT)
}

/// [`condition_diag`] on an explicit kernel matrix.
pub fn condition_diag_kernel(
    e: &linalg::DenseMatrix,
    s_e: &WeightedSampleSet,
    lambda: f64,
    r_max: f64,
    markov: f64,
) -> Result<ConditionDiag> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(crate::Error::Parameter(format!("lambda must be positive, got {lambda}")));
    }
    if s_e.source_size() != e.rows() {
        return Err(crate::Error::Dimension(format!(
            "sample set over {} points, kernel over {}",
            s_e.source_size(),
            e.rows()
        )));
    }
    let points = e.rows() as f64;
    let log_kappa_bound = r_max + (points / lambda).ln() + (markov * points).ln();
    if s_e.is_empty() {
        return Ok(ConditionDiag {
            log_kappa_actual: 0.0,
            log_kappa_bound,
        });
    }
    let eig = linalg::symmetric_eigenvalues(&s_e.sketch_gram(e).symmetrize().add_identity(lambda));
    let (hi, lo) = (eig[0], eig[eig.len() - 1]);
    Ok(ConditionDiag {
        log_kappa_actual: (hi / lo).ln(),
        log_kappa_bound,
    })
}
