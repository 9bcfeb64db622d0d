use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An exponent would overflow a 64-bit float.
    #[error("kernel exponent {inner_product} exceeds the overflow guard{}", pair_suffix(.pair))]
    Range {
        inner_product: f64,
        pair: Option<(usize, usize)>,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("matrix shape violation: {0}")]
    Shape(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("non-finite value at position {0}")]
    NotFinite(usize),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    /// Mean estimation failed to meet its energy-norm contract after all retries.
    #[error("mean estimation missed its contract: achieved energy-norm error {achieved} > {target}")]
    Estimation { achieved: f64, target: f64 },

    #[error("sample explosion at level {level}: {size} samples exceeds cap {cap}")]
    SampleExplosion { level: usize, size: usize, cap: usize },

    /// The estimated normalizer for a row is not positive.
    #[error("degenerate normalizer b = {value} at row {row}")]
    DegenerateNormalizer { row: usize, value: f64 },

    #[error("parse error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("internal consistency check failed: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn pair_suffix(pair: &Option<(usize, usize)>) -> String {
    match pair {
        Some((i, j)) => format!(" for pair ({i}, {j})"),
        None => String::new(),
    }
}
