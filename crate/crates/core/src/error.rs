use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({x}, {y}) lies outside the domain bounds")]
    OutsideDomain { x: f64, y: f64 },

    #[error("density is degenerate: rejection acceptance rate {rate:e} after {trials} trials")]
    DegenerateDensity { rate: f64, trials: u64 },

    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid model parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient mass: demanded {demanded:e}, available {available:e}")]
    InsufficientMass { demanded: f64, available: f64 },

    #[error("structured KKT pivot lost positive definiteness (condition estimate {condition:e})")]
    Conditioning { condition: f64 },

    #[error("exact transport limited to {limit} atoms per side, got {rows}x{cols}; use the Sinkhorn variant")]
    SizeLimit {
        rows: usize,
        cols: usize,
        limit: usize,
    },

    #[error("transportation simplex did not terminate within {0} pivots")]
    PivotLimit(usize),

    #[error("no data: {0}")]
    NoData(String),

    #[error("bookkeeping error: remaining weight {value:e} at sample {index} is negative")]
    Bookkeeping { index: usize, value: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
