//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} of intensity matrix sums to {sum:e}, expected 0")]
    RowSumViolation { row: usize, sum: f64 },

    #[error("negative rate {value} at ({row}, {col})")]
    NegativeRate { row: usize, col: usize, value: f64 },

    #[error("matrix contains a non-finite entry")]
    NonFinite,

    #[error("linear system is numerically singular")]
    SingularSystem,

    #[error("pricing kernel component f[{state}] = {value} is not positive; model rejected")]
    NonPositiveF { state: usize, value: f64 },

    #[error("parameter vector layout mismatch: {0}")]
    LayoutMismatch(String),

    #[error("invalid payment schedule: {0}")]
    ScheduleError(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("unknown currency {0}")]
    UnknownCurrency(String),

    #[error("no spot rate supplied for currency {0}")]
    MissingSpot(String),

    #[error("quote mid for {0} is not positive; cannot take logs")]
    NonPositiveQuote(String),

    #[error("all particle weights vanished; filter is degenerate")]
    Degenerate,

    #[error("model prices and snapshot records are misaligned: {0}")]
    Misaligned(String),

    #[error("parse error at line {line}: {msg}")]
    ParseError { line: u64, msg: String },

    #[error("schema error: {0}")]
    SchemaError(String),

    #[error("crossed quote at line {line}: bid {bid} > ask {ask}")]
    CrossedQuote { line: u64, bid: f64, ask: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
