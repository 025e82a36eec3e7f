use thiserror::Error;

use crate::data::YearMonth;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid date code {0}: expected YYYYMM with month 01-12")]
    InvalidDate(i64),

    #[error("dates are not strictly increasing monthly: {prev} followed by {next}")]
    NonMonotoneDates { prev: YearMonth, next: YearMonth },

    #[error("duplicate date {0}")]
    DuplicateDate(YearMonth),

    #[error("no overlapping months between returns ({returns_start}..{returns_end}) and signals ({signals_start}..{signals_end})")]
    EmptyOverlap {
        returns_start: YearMonth,
        returns_end: YearMonth,
        signals_start: YearMonth,
        signals_end: YearMonth,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("CRRA domain violated: gross wealth 1 + r = {gross} must be positive")]
    Domain { gross: f64 },

    #[error("missing return for {series} at {date}")]
    MissingReturn { date: YearMonth, series: String },

    #[error("non-finite value {value} for {series} at {date}")]
    NonFinite {
        date: YearMonth,
        series: String,
        value: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("objective is not finite at the starting point")]
    NonFiniteObjective,

    #[error("malformed CSV {path}, line {line}: {reason}")]
    Malformed {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
