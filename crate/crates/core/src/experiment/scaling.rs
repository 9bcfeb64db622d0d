//! Growth of modeled and classical query counts with `n`.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::generate::{generate, ExperimentConfig};
use super::report::merge_ledgers;
use crate::error::{Error, Result};
use crate::qattention;
use crate::qsim::CostLedger;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub n: usize,
    /// Means over trials.
    pub modeled_queries: f64,
    pub kernel_evals: f64,
    pub classical_row_queries_qk: f64,
    pub classical_row_queries_v: f64,
    pub s_e: f64,
    pub s_v: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub modeled_slope: f64,
    pub kernel_eval_slope: f64,
}

/// Least-squares slope of `ln y` against `ln x`; 0 when all `x` coincide.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Dimension(format!("{} abscissae, {} ordinates", xs.len(), ys.len())));
    }
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::Parameter("log-log fit needs positive data".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= 1e-24 {
        return Ok(0.0);
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

/// Runs the full preprocess at every `n`, `base.trials` times each with seeds
/// `base.seed + t`.
pub fn scaling_study(base: &ExperimentConfig, n_list: &[usize]) -> Result<ScalingReport> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Parameter(format!("n_list must be nonempty and ascending, got {n_list:?}")));
    }
    base.validate()?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let runs: Vec<(crate::qsim::LedgerSnapshot, usize, usize)> = (0..base.trials)
            .into_par_iter()
            .map(|t| {
                let cfg = base.with_n_seed(n, base.trial_seed(t));
                let inst = Arc::new(generate(&cfg)?);
                let qcfg = cfg.qattention_config(&inst)?;
                let ledger = CostLedger::new();
                let sk = qattention::preprocess(inst, &qcfg, &ledger)?;
                Ok((ledger.snapshot(), sk.s_e(), sk.s_v()))
            })
            .collect::<Result<_>>()?;
        let k = runs.len() as f64;
        let total = merge_ledgers(runs.iter().map(|r| &r.0));
        rows.push(ScalingRow {
            n,
            modeled_queries: total.modeled_quantum_queries / k,
            kernel_evals: total.kernel_evals as f64 / k,
            classical_row_queries_qk: total.classical_row_queries_qk as f64 / k,
            classical_row_queries_v: total.classical_row_queries_v as f64 / k,
            s_e: runs.iter().map(|r| r.1 as f64).sum::<f64>() / k,
            s_v: runs.iter().map(|r| r.2 as f64).sum::<f64>() / k,
        });
    }
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let modeled: Vec<f64> = rows.iter().map(|r| r.modeled_queries).collect();
    let evals: Vec<f64> = rows.iter().map(|r| r.kernel_evals).collect();
    Ok(ScalingReport {
        modeled_slope: fit_slope(&ns, &modeled)?,
        kernel_eval_slope: fit_slope(&ns, &evals)?,
        rows,
    })
}

pub fn write_scaling_csv<W: Write>(out: W, report: &ScalingReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in &report.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
