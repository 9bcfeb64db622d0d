use rand::Rng;
use rayon::prelude::*;

use super::ledger::{polylog, CostLedger};
use super::rng::SimRng;
use super::RowOracle;
use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, Sample, WeightedSampleSet};

/// Probabilities below this are raised to it before weights are formed.
pub const MIN_PROBABILITY: f64 = 1e-15;

/// Independent Bernoulli(p_i) inclusion with weight `1/√p_i`.
///
/// All `n` probabilities are evaluated classically (in parallel); the ledger
/// is charged the modeled Grover-style cost
/// `⌈√(n·Σp)⌉ · log₂(n+2) · per_oracle_cost` under `label`.
pub fn qsample<F>(
    n: usize,
    p_oracle: F,
    per_oracle_cost: f64,
    label: &str,
    rng: &mut SimRng,
    ledger: &CostLedger,
) -> Result<WeightedSampleSet>
where
    F: Fn(usize) -> Result<f64> + Sync,
{
    let probabilities: Vec<f64> = (0..n)
        .into_par_iter()
        .map(&p_oracle)
        .collect::<Result<_>>()?;
    qsample_probabilities(&probabilities, per_oracle_cost, label, rng, ledger)
}

/// [`qsample`] with the probabilities already in hand.
pub fn qsample_probabilities(
    probabilities: &[f64],
    per_oracle_cost: f64,
    label: &str,
    rng: &mut SimRng,
    ledger: &CostLedger,
) -> Result<WeightedSampleSet> {
    for (i, &p) in probabilities.iter().enumerate() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Parameter(format!(
                "probability {p} at index {i} is outside [0, 1]"
            )));
        }
    }
    let n = probabilities.len();
    let set = bernoulli_draw(probabilities, rng);
    ledger.charge_modeled(label, qsample_cost(n, probabilities.iter().sum()) * per_oracle_cost);
    Ok(set)
}

/// `⌈√(n·Σp)⌉ · log₂(n+2)`.
pub fn qsample_cost(n: usize, p_sum: f64) -> f64 {
    if p_sum <= 0.0 {
        return 0.0;
    }
    (n as f64 * p_sum).sqrt().ceil() * polylog(n)
}

/// One uniform per index, consumed in index order whatever the outcome.
fn bernoulli_draw(probabilities: &[f64], rng: &mut SimRng) -> WeightedSampleSet {
    let n = probabilities.len();
    let mut samples = Vec::new();
    for (index, &p) in probabilities.iter().enumerate() {
        let u: f64 = rng.random();
        if u < p {
            samples.push(Sample {
                index,
                weight: p.max(MIN_PROBABILITY).sqrt().recip(),
            });
        }
    }
    WeightedSampleSet::new(n, samples).expect("drawn indices are in range with positive weights")
}

#[derive(Clone, Debug)]
pub struct LeverageSample {
    pub set: WeightedSampleSet,
    /// Inclusion probabilities after flooring.
    pub probabilities: Vec<f64>,
    pub leverage: Vec<f64>,
    /// Multiplier `c ≥ 1` in `p_i = min{1, c·τ_i·s/d}`.
    pub scale: f64,
}

/// Leverage-score row sampling of an `n×d` row oracle with expected size
/// about `s_target`.
///
/// Leverage scores are computed exactly from all rows. Modeled cost:
/// `⌈√(n·s_target)⌉·log₂(n+2)` row queries plus `d³` postprocessing.
pub fn qleverage_score(
    rows: &impl RowOracle,
    s_target: usize,
    rng: &mut SimRng,
    ledger: &CostLedger,
) -> Result<LeverageSample> {
    if s_target == 0 {
        return Err(Error::Parameter("s_target must be at least 1".into()));
    }
    let (n, d) = (rows.len(), rows.dim());
    let data: Vec<Vec<f64>> = (0..n).map(|i| rows.row(i)).collect::<Result<_>>()?;
    let v = DenseMatrix::from_rows(&data)?;
    let leverage: Vec<f64> = linalg::leverage_scores(&v).into();
    let scale = probability_scale(&leverage, s_target as f64, d as f64);
    let probabilities: Vec<f64> = leverage
        .iter()
        .map(|&t| (scale * t * s_target as f64 / d as f64).min(1.0).max(MIN_PROBABILITY))
        .collect();
    let set = bernoulli_draw(&probabilities, rng);
    let cost = (n as f64 * s_target as f64).sqrt().ceil() * polylog(n) + (d as f64).powi(3);
    ledger.charge_modeled("qleverage", cost);
    Ok(LeverageSample {
        set,
        probabilities,
        leverage,
        scale,
    })
}

/// Smallest `c ≥ 1` with `Σ min{1, c·τ_i·s/d} ≥ s`, or the value that
/// saturates every positive score when `s` is out of reach.
fn probability_scale(tau: &[f64], s: f64, d: f64) -> f64 {
    let total = |c: f64| -> f64 { tau.iter().map(|&t| (c * t * s / d).min(1.0)).sum() };
    if total(1.0) >= s {
        return 1.0;
    }
    let saturate = tau
        .iter()
        .filter(|&&t| t > 0.0)
        .map(|&t| d / (t * s))
        .fold(1.0, f64::max);
    if total(saturate) <= s {
        return saturate;
    }
    let (mut lo, mut hi) = (1.0, saturate);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) >= s {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    hi
}
