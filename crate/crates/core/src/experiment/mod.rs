//! Data generation, matrix files, experiment runners and reports.
//!
//! Every runner executes `cfg.trials` independent trials (in parallel, trial
//! `t` seeded with `cfg.seed + t`) and folds them into a [`Report`]. Trials
//! with a `"violation": true` entry are counted in `bounds.violations`.

pub mod generate;
pub mod io;
pub mod metrics;
pub mod report;
pub mod scaling;

use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value};

pub use generate::{generate, generate_unscaled, ExperimentConfig, Generator, PipelineOptions};
pub use metrics::{aggregate, condition_diag, metrics, ConditionDiag, InstanceMetrics, MetricsReport};
pub use report::{merge_ledgers, Report};
pub use scaling::{fit_slope, scaling_study, ScalingReport, ScalingRow};

use crate::amm;
use crate::error::Result;
use crate::linalg::{self, DenseMatrix, DEFAULT_REL_TOL};
use crate::nystrom::{self, NystromConfig};
use crate::oracle::{self, AttentionInstance, CountingAccess};
use crate::qattention;
use crate::qsim::{derive_seed, rng_from_seed, CostLedger, LedgerSnapshot};
use crate::rownorm;

/// Slack on the Nyström error bounds when counting violations.
pub const NYSTROM_SLACK: f64 = 1.1;

fn run_trials<F>(cfg: &ExperimentConfig, trial: F) -> Result<(Vec<Value>, LedgerSnapshot)>
where
    F: Fn(&ExperimentConfig, Arc<AttentionInstance>, &CostLedger) -> Result<Value> + Sync,
{
    cfg.validate()?;
    let runs: Vec<(Value, LedgerSnapshot)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| {
            let tcfg = cfg.with_n_seed(cfg.n, cfg.trial_seed(t));
            let inst = Arc::new(generate(&tcfg)?);
            let ledger = CostLedger::new();
            let mut v = trial(&tcfg, inst, &ledger)?;
            v["seed"] = json!(tcfg.seed);
            Ok((v, ledger.snapshot()))
        })
        .collect::<Result<_>>()?;
    let ledger = merge_ledgers(runs.iter().map(|r| &r.1));
    Ok((runs.into_iter().map(|r| r.0).collect(), ledger))
}

fn envelope(cfg: &ExperimentConfig, metrics: Value, trials: Vec<Value>, ledger: LedgerSnapshot) -> Report {
    let violations = trials.iter().filter(|t| t["violation"] == json!(true)).count();
    Report {
        config: cfg.clone(),
        metrics,
        bounds: json!({ "violations": violations, "trials": trials }),
        ledger,
        seed: cfg.seed,
    }
}

fn nystrom_config(cfg: &ExperimentConfig, inst: &AttentionInstance) -> Result<NystromConfig> {
    let mut ny = cfg.qattention_config(inst)?.nystrom.expect("experiment configs set Nyström options");
    ny.seed = derive_seed(cfg.seed, 1);
    Ok(ny)
}

/// Exact attention for the first trial's instance, plus its metrics.
pub fn run_exact(cfg: &ExperimentConfig) -> Result<(Report, DenseMatrix)> {
    cfg.validate()?;
    let inst = generate(cfg)?;
    let out = oracle::attention_exact(&inst)?;
    let m = metrics::metrics(&inst)?;
    let report = Report {
        config: cfg.clone(),
        metrics: serde_json::to_value(m)?,
        bounds: json!({}),
        ledger: LedgerSnapshot::default(),
        seed: cfg.seed,
    };
    Ok((report, out))
}

pub fn run_metrics(cfg: &ExperimentConfig) -> Result<Report> {
    let (trials, ledger) = run_trials(cfg, |_, inst, _| Ok(serde_json::to_value(metrics::metrics(&inst)?)?))?;
    let per: Vec<InstanceMetrics> = trials
        .iter()
        .map(|v| serde_json::from_value(v.clone()))
        .collect::<std::result::Result<_, _>>()?;
    Ok(envelope(cfg, serde_json::to_value(aggregate(per))?, Vec::new(), ledger))
}

pub fn run_nystrom(cfg: &ExperimentConfig) -> Result<Report> {
    let (trials, ledger) = run_trials(cfg, |tcfg, inst, ledger| {
        let ny = nystrom_config(tcfg, &inst)?;
        let s = nystrom::qnystrom(&CountingAccess::new(&inst, ledger), &ny, ledger)?;
        let e = oracle::kernel_matrix(&inst)?;
        let diff = e.sub(&oracle::nystrom_explicit(&e, &s, DEFAULT_REL_TOL));
        let spectral = linalg::spectral_norm(&diff);
        let frobenius = diff.frobenius_norm();
        let lambda = tcfg.lambda;
        let fro_bound = lambda * ((2 * inst.n()) as f64).sqrt();
        let sandwich = nystrom::sandwich_check(&e, &s, lambda, 1e-8);
        let cond = condition_diag(&inst, &s, lambda)?;
        Ok(json!({
            "s": s.len(),
            "stat_dim": ny.stat_dim,
            "spectral_error": spectral,
            "spectral_bound": lambda,
            "frobenius_error": frobenius,
            "frobenius_bound": fro_bound,
            "sandwich": sandwich,
            "condition": cond,
            "violation": spectral > NYSTROM_SLACK * lambda || frobenius > NYSTROM_SLACK * fro_bound,
        }))
    })?;
    Ok(envelope(cfg, Value::Null, trials, ledger))
}

pub fn run_rownorm(cfg: &ExperimentConfig) -> Result<Report> {
    let (trials, ledger) = run_trials(cfg, |tcfg, inst, ledger| {
        let ny = nystrom_config(tcfg, &inst)?;
        let exact = oracle::normalization_exact(&inst)?;
        let a_norm = linalg::spectral_norm(&oracle::attention_matrix(&inst)?);
        let sk = rownorm::preprocess_with(inst.clone(), &ny, tcfg.epsilon, &tcfg.backend, ledger)?;
        let est = sk.query_all()?;
        let max_error = est.iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let bound = rownorm::query_error_bound(tcfg.epsilon, a_norm, tcfg.lambda, inst.n());
        Ok(json!({
            "s": sk.s(),
            "max_error": max_error,
            "bound": bound,
            "energy_error": sk.energy_error(),
            "violation": max_error > bound,
        }))
    })?;
    Ok(envelope(cfg, Value::Null, trials, ledger))
}

pub fn run_amm(cfg: &ExperimentConfig) -> Result<Report> {
    let (trials, ledger) = run_trials(cfg, |tcfg, inst, ledger| {
        let access = CountingAccess::new(&inst, ledger);
        let mut rng = rng_from_seed(derive_seed(tcfg.seed, 3));
        let sk = amm::build(&access.values(), tcfg.epsilon, &tcfg.pipeline.amm, &mut rng, ledger)?;
        // B = (D⁻¹A)ᵀ, the factor the sketch multiplies against
        let a = oracle::attention_matrix(&inst)?;
        let d = oracle::normalization_exact(&inst)?;
        let b = DenseMatrix::from_fn(inst.n(), inst.n(), |j, i| a.get(i, j) / d[i]);
        let err = amm::amm_error(inst.v(), &b, &sk.sample)?;
        Ok(json!({
            "s_target": sk.s_target,
            "s": sk.sample.len(),
            "alpha": sk.alpha,
            "error": err,
            "violation": err > tcfg.epsilon,
        }))
    })?;
    Ok(envelope(cfg, Value::Null, trials, ledger))
}

pub fn run_attend(cfg: &ExperimentConfig) -> Result<Report> {
    let (trials, ledger) = run_trials(cfg, |tcfg, inst, ledger| {
        let qcfg = tcfg.qattention_config(&inst)?;
        let sk = qattention::preprocess(inst.clone(), &qcfg, ledger)?;
        let bound = qattention::main_bound(&inst, &sk, tcfg.epsilon, tcfg.lambda)?;
        let exact = oracle::attention_exact(&inst)?;
        let approx = sk.query_all()?;
        let rel = approx.sub(&exact).frobenius_norm() / exact.frobenius_norm().max(f64::MIN_POSITIVE);
        let lhs = bound.lhs.unwrap_or(f64::NAN);
        Ok(json!({
            "s_e": sk.s_e(),
            "s_v": sk.s_v(),
            "relative_error": rel,
            "main": bound,
            "violation": bound.assumption_ok && lhs > bound.rhs,
        }))
    })?;
    Ok(envelope(cfg, Value::Null, trials, ledger))
}

/// Nyström, normalizer and end-to-end checks on the same configuration;
/// `bounds.violations` is their total.
pub fn selfcheck(cfg: &ExperimentConfig) -> Result<Report> {
    let parts = [
        ("nystrom", run_nystrom(cfg)?),
        ("rownorm", run_rownorm(cfg)?),
        ("attend", run_attend(cfg)?),
    ];
    let violations: u64 = parts.iter().map(|(_, r)| r.bounds["violations"].as_u64().unwrap_or(0)).sum();
    let ledger = merge_ledgers(parts.iter().map(|(_, r)| &r.ledger));
    let mut bounds = serde_json::Map::new();
    for (name, r) in parts {
        bounds.insert(name.to_string(), r.bounds);
    }
    bounds.insert("violations".into(), json!(violations));
    Ok(Report {
        config: cfg.clone(),
        metrics: Value::Null,
        bounds: Value::Object(bounds),
        ledger,
        seed: cfg.seed,
    })
}
