//! Command-line front end: synthetic data, exact references, sketch
//! experiments and scaling studies, all reported as JSON or CSV.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use attnsketch::experiment::{self, io as mio, scaling, ExperimentConfig, Generator, PipelineOptions, Report};
use attnsketch::{Error, MeanBackend, MeanEstimatorConfig};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

const THREADS_ENV: &str = "ATTNSKETCH_THREADS";

#[derive(Parser)]
#[command(name = "attnsketch", version, about = "Sketched attention experiments with modeled quantum query counts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic Q, K, V triple to the directory given by --out.
    Gen(Common),
    /// Exact attention output and instance metrics.
    Exact {
        #[command(flatten)]
        common: Common,
        /// Also write the n×d output matrix here (MatrixFile, or CSV with --format csv).
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Nyström landmark sampling against the exact kernel.
    Nystrom(Common),
    /// Normalizer estimates against the exact row sums.
    Rownorm(Common),
    /// Row sampling of V for the product with the normalized attention matrix.
    Amm(Common),
    /// The full pipeline against exact attention.
    Attend(Common),
    /// Mean instance statistics.
    Metrics(Common),
    /// Modeled query counts over a list of sizes, with log-log slopes.
    ScaleStudy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128, 256, 512, 1024])]
        n_list: Vec<usize>,
    },
    /// Nyström, normalizer and end-to-end checks; exits 3 on any bound violation.
    Selfcheck(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Exact,
    Perturbed,
    Mc,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum GeneratorArg {
    Gaussian,
    Clustered,
    OrthonormalV,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value_t = 0.2)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, value_enum, default_value = "exact")]
    backend: BackendArg,
    /// Monte Carlo draws per call are factor·s/ε²; defaults to 2n.
    #[arg(long)]
    mc_factor: Option<f64>,
    #[arg(long, value_enum, default_value = "gaussian")]
    generator: GeneratorArg,
    /// Cluster count for the clustered generator.
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Noise scale around the cluster centers.
    #[arg(long, default_value_t = 0.05)]
    spread: f64,
    /// Directory holding q, k and v matrices (`.atnm` or `.csv`); overrides --generator.
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Input Q and K already carry the d^{-1/4} factor.
    #[arg(long)]
    prescaled: bool,
    /// Report destination (a directory for `gen`); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Smaller Nyström constants, so that sampling is sparse at a few hundred points.
    #[arg(long)]
    reduced: bool,
    /// Separate leverage and mean-estimation samples of the kernel.
    #[arg(long)]
    strict: bool,
}

#[derive(Debug)]
enum Failure {
    Validation(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Dimension(_)
            | Error::Parameter(_)
            | Error::Shape(_)
            | Error::NotFinite(_)
            | Error::IndexOutOfRange { .. }
            | Error::Format { .. }
            | Error::Csv(_) => Failure::Validation(e.into()),
            other => Failure::Runtime(other.into()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| run(cli.command));
    match result {
        Ok(code) => code,
        Err(Failure::Validation(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> Outcome<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::Validation(anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Runtime(e.into()))
}

fn run(command: Command) -> Outcome<ExitCode> {
    match command {
        Command::Gen(c) => gen(&c).map(|_| ExitCode::SUCCESS),
        Command::Exact { common, matrix } => {
            let cfg = config(&common)?;
            let (report, out) = experiment::run_exact(&cfg)?;
            if let Some(path) = matrix {
                write_matrix(&path, &out, common.format)?;
            }
            emit(&common, &report, metrics_rows(&report))
        }
        Command::Nystrom(c) => standard(&c, experiment::run_nystrom),
        Command::Rownorm(c) => standard(&c, experiment::run_rownorm),
        Command::Amm(c) => standard(&c, experiment::run_amm),
        Command::Attend(c) => standard(&c, experiment::run_attend),
        Command::Metrics(c) => {
            let report = experiment::run_metrics(&config(&c)?)?;
            emit(&c, &report, metrics_rows(&report))
        }
        Command::ScaleStudy { common, n_list } => {
            let study = experiment::scaling_study(&config(&common)?, &n_list)?;
            let mut out = sink(common.out.as_deref())?;
            match common.format {
                Format::Json => out.write_all(experiment::report::to_json_string(&study)?.as_bytes())?,
                Format::Csv => scaling::write_scaling_csv(&mut out, &study)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selfcheck(c) => {
            let report = experiment::selfcheck(&config(&c)?)?;
            let violations = report.bounds["violations"].as_u64().unwrap_or(0);
            let rows = ["nystrom", "rownorm", "attend"]
                .iter()
                .flat_map(|part| trial_rows(&report.bounds[part], Some(part)))
                .collect();
            emit(&c, &report, rows)?;
            if violations > 0 {
                eprintln!("selfcheck: {violations} bound violation(s)");
                return Ok(ExitCode::from(3));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn standard(c: &Common, runner: fn(&ExperimentConfig) -> attnsketch::Result<Report>) -> Outcome<ExitCode> {
    let report = runner(&config(c)?)?;
    let rows = trial_rows(&report.bounds, None);
    emit(c, &report, rows)
}

fn config(c: &Common) -> Outcome<ExperimentConfig> {
    let (generator, n, d) = match &c.input {
        Some(dir) => {
            let [q, k, v] = ["q", "k", "v"].map(|name| locate(dir, name));
            let (q, k, v) = (q?, k?, v?);
            let shape = mio::load_matrix(&q)?.shape();
            let prescaled = c.prescaled;
            (Generator::FromFiles { q, k, v, prescaled }, shape.0, shape.1)
        }
        None => {
            let g = match c.generator {
                GeneratorArg::Gaussian => Generator::Gaussian,
                GeneratorArg::Clustered => Generator::Clustered { k: c.k, spread: c.spread },
                GeneratorArg::OrthonormalV => Generator::OrthonormalV,
            };
            (g, c.n, c.d)
        }
    };
    let mut cfg = ExperimentConfig::new(n, d, c.lambda, c.eps, c.seed, generator)?;
    cfg.trials = c.trials;
    let backend = match c.backend {
        BackendArg::Exact => MeanBackend::Exact,
        BackendArg::Perturbed => MeanBackend::Perturbed,
        BackendArg::Mc => MeanBackend::MonteCarlo,
    };
    cfg.backend = MeanEstimatorConfig::new(backend, c.eps, c.seed)?.with_mc_sample_factor(c.mc_factor.unwrap_or(2.0 * n as f64))?;
    if c.reduced {
        cfg.pipeline = PipelineOptions::reduced();
    }
    cfg.pipeline.strict_two_calls = c.strict;
    cfg.validate()?;
    Ok(cfg)
}

fn locate(dir: &Path, name: &str) -> Outcome<PathBuf> {
    ["atnm", "csv"]
        .iter()
        .map(|ext| dir.join(format!("{name}.{ext}")))
        .find(|p| p.is_file())
        .ok_or_else(|| Failure::Validation(anyhow::anyhow!("no {name}.atnm or {name}.csv in {}", dir.display())))
}

fn gen(c: &Common) -> Outcome<()> {
    let dir = c
        .out
        .as_deref()
        .ok_or_else(|| Failure::Validation(anyhow::anyhow!("gen needs --out <directory>")))?;
    let inst = experiment::generate_unscaled(&config(c)?)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(Failure::Runtime)?;
    let ext = if c.format == Format::Csv { "csv" } else { "atnm" };
    for (name, m) in [("q", inst.q()), ("k", inst.k()), ("v", inst.v())] {
        write_matrix(&dir.join(format!("{name}.{ext}")), m, c.format)?;
    }
    Ok(())
}

fn write_matrix(path: &Path, m: &attnsketch::DenseMatrix, format: Format) -> Outcome<()> {
    match format {
        Format::Csv => mio::write_csv(File::create(path)?, m)?,
        Format::Json => mio::write_matrix_file(path, m)?,
    }
    Ok(())
}

fn sink(path: Option<&Path>) -> Outcome<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display())).map_err(Failure::Runtime)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit(c: &Common, report: &Report, rows: Vec<serde_json::Map<String, Value>>) -> Outcome<ExitCode> {
    let mut out = sink(c.out.as_deref())?;
    match c.format {
        Format::Json => out.write_all(report.to_json()?.as_bytes())?,
        Format::Csv => write_rows(&mut out, &rows)?,
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn metrics_rows(report: &Report) -> Vec<serde_json::Map<String, Value>> {
    match &report.metrics["trials"] {
        Value::Array(trials) => trials.iter().map(|t| flatten(t, None)).collect(),
        _ => vec![flatten(&report.metrics, None)],
    }
}

fn trial_rows(bounds: &Value, part: Option<&str>) -> Vec<serde_json::Map<String, Value>> {
    let Some(trials) = bounds["trials"].as_array() else {
        return Vec::new();
    };
    trials
        .iter()
        .map(|t| {
            let mut row = serde_json::Map::new();
            if let Some(p) = part {
                row.insert("check".into(), Value::String(p.to_string()));
            }
            row.extend(flatten(t, None));
            row
        })
        .collect()
}

/// Scalar leaves keyed by their dotted path.
fn flatten(v: &Value, prefix: Option<&str>) -> serde_json::Map<String, Value> {
    let mut out = serde_json::Map::new();
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = prefix.map_or_else(|| k.clone(), |p| format!("{p}.{k}"));
                out.extend(flatten(child, Some(&key)));
            }
        }
        Value::Array(_) => {}
        leaf => {
            out.insert(prefix.unwrap_or("value").to_string(), leaf.clone());
        }
    }
    out
}

fn write_rows<W: Write>(out: W, rows: &[serde_json::Map<String, Value>]) -> Outcome<()> {
    let mut header: Vec<String> = Vec::new();
    for row in rows {
        for k in row.keys() {
            if !header.contains(k) {
                header.push(k.clone());
            }
        }
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header).map_err(Error::from)?;
    for row in rows {
        let record: Vec<String> = header
            .iter()
            .map(|k| match row.get(k) {
                None | Some(Value::Null) => String::new(),
                Some(Value::Number(x)) => x.as_f64().filter(|_| x.is_f64()).map_or_else(|| x.to_string(), |f| format!("{f:?}")),
                Some(Value::String(s)) => s.clone(),
                Some(other) => other.to_string(),
            })
            .collect();
        w.write_record(&record).map_err(Error::from)?;
    }
    w.flush()?;
    Ok(())
}
