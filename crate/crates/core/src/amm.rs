//! Leverage-score sampling of `V` for approximate matrix multiplication.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, WeightedSampleSet};
use crate::qsim::{self, CostLedger, RowOracle, SimRng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmmOptions {
    pub c_amm: f64,
    /// Multiply the target size by `ln(n+2)`.
    pub log_factor: bool,
    /// Use this row distortion instead of computing it from `V`.
    pub alpha: Option<f64>,
    /// Odd number of independent sketches to draw; the median one is kept.
    pub boost_copies: usize,
}

impl Default for AmmOptions {
    fn default() -> Self {
        Self {
            c_amm: 10.0,
            log_factor: true,
            alpha: None,
            boost_copies: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmmSketch {
    pub s_target: usize,
    pub sample: WeightedSampleSet,
    pub probabilities: Vec<f64>,
    /// `S_Vᵀ V`.
    pub v_tilde: DenseMatrix,
    pub alpha: f64,
    pub epsilon: f64,
}

/// `⌈c·ε⁻²·α·ln(n+2)⌉` (or without the log when `log_factor` is off).
pub fn target_size(n: usize, epsilon: f64, alpha: f64, opts: &AmmOptions) -> usize {
    let log = if opts.log_factor { ((n + 2) as f64).ln() } else { 1.0 };
    ((opts.c_amm * alpha * log / (epsilon * epsilon)).ceil() as usize).max(1)
}

/// Samples rows of `V` by leverage score.
pub fn build(
    v: &impl RowOracle,
    epsilon: f64,
    opts: &AmmOptions,
    rng: &mut SimRng,
    ledger: &CostLedger,
) -> Result<AmmSketch> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {epsilon}")));
    }
    if opts.boost_copies == 0 || opts.boost_copies % 2 == 0 {
        return Err(Error::Parameter(format!(
            "boost_copies must be odd, got {}",
            opts.boost_copies
        )));
    }
    let rows: Vec<Vec<f64>> = (0..v.len()).map(|i| v.row(i)).collect::<Result<_>>()?;
    let dense = DenseMatrix::from_rows(&rows)?;
    let alpha = match opts.alpha {
        Some(a) if a >= 1.0 && a.is_finite() => a,
        Some(a) => return Err(Error::Parameter(format!("alpha override must be ≥ 1, got {a}"))),
        None => linalg::row_distortion(&dense)?,
    };
    let s_target = target_size(dense.rows(), epsilon, alpha, opts);

    let mut copies = Vec::with_capacity(opts.boost_copies);
    for _ in 0..opts.boost_copies {
        copies.push(qsim::qleverage_score(v, s_target, rng, ledger)?);
    }
    let pick = if copies.len() == 1 {
        0
    } else {
        let grams: Vec<DenseMatrix> = copies
            .iter()
            .map(|c| {
                let sv = c.set.sketch_rows(&dense);
                sv.transpose().matmul(&sv)
            })
            .collect();
        median_index(&grams)
    };
    let chosen = copies.swap_remove(pick);
    Ok(AmmSketch {
        s_target,
        v_tilde: chosen.set.sketch_rows(&dense),
        sample: chosen.set,
        probabilities: chosen.probabilities,
        alpha,
        epsilon,
    })
}

/// Index whose median Frobenius distance to the others is smallest.
fn median_index(grams: &[DenseMatrix]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, gi) in grams.iter().enumerate() {
        let mut d: Vec<f64> = grams
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, gj)| gi.sub(gj).frobenius_norm())
            .collect();
        d.sort_by(f64::total_cmp);
        let med = d[d.len() / 2];
        if med < best.0 {
            best = (med, i);
        }
    }
    best.1
}

/// `‖VᵀSSᵀB − VᵀB‖_F / (‖V‖_F‖B‖_F)`.
pub fn amm_error(v: &DenseMatrix, b: &DenseMatrix, s: &WeightedSampleSet) -> Result<f64> {
    if v.rows() != b.rows() || s.source_size() != v.rows() {
        return Err(Error::Dimension(format!(
            "V has {} rows, B has {}, S is over {}",
            v.rows(),
            b.rows(),
            s.source_size()
        )));
    }
    let denom = v.frobenius_norm() * b.frobenius_norm();
    if denom == 0.0 {
        return Err(Error::Parameter("AMM error undefined for a zero factor".into()));
    }
    let approx = s.sketch_rows(v).transpose().matmul(&s.sketch_rows(b));
    let exact = v.transpose().matmul(b);
    Ok(approx.sub(&exact).frobenius_norm() / denom)
}

/// `(α/s)·‖V‖_F²·‖B‖_F²`, the variance ceiling for the sketch.
pub fn second_moment_bound(alpha: f64, s: usize, v: &DenseMatrix, b: &DenseMatrix) -> f64 {
    alpha / s as f64 * v.frobenius_norm().powi(2) * b.frobenius_norm().powi(2)
}
