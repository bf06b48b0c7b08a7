//! Crate-wide error type. Variants map onto process exit codes: config 1,
//! data 2, gateway 3, internal invariant 4.

use std::path::PathBuf;

use chrono::NaiveDate;

use crate::prediction::ValidationCode;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // -- configuration --
    #[error("config: {0}")]
    Config(String),
    #[error("config: environment variable {name} is not set")]
    MissingEnvVar { name: String },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    // -- data --
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {message}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: duplicate date {date}")]
    DuplicateDate { path: PathBuf, date: NaiveDate },
    #[error("{path}: non-positive price {value} on {date}")]
    NonPositivePrice {
        path: PathBuf,
        date: NaiveDate,
        value: f64,
    },
    #[error("no {series} data at or before {as_of}")]
    EmptyWindow { series: String, as_of: NaiveDate },
    #[error("insufficient history for {what}: need {needed}, have {available}")]
    InsufficientHistory {
        what: String,
        needed: usize,
        available: usize,
    },
    #[error("unknown fund {0}")]
    UnknownFund(String),
    #[error("{fund}: data gap of {days} days between {from} and {to} exceeds {limit}")]
    DataGap {
        fund: String,
        from: NaiveDate,
        to: NaiveDate,
        days: i64,
        limit: i64,
    },
    #[error("volume ratio undefined on {date}: prior 5-day mean volume is zero")]
    UndefinedVolumeRatio { date: NaiveDate },
    #[error("NAV series is empty")]
    EmptyNavSeries,
    #[error("accounts have disjoint calendars: {0}")]
    DisjointCalendars(String),
    #[error("mismatched inputs: {0}")]
    InputMismatch(String),

    // -- gateway --
    #[error("credential env var {env_var} is not set (required for {mode} mode)")]
    MissingCredential { env_var: String, mode: String },
    #[error("gateway: retries exhausted after {attempts} attempts: {last_error}")]
    RetriesExhausted { attempts: u32, last_error: String },
    #[error("gateway: transport failure: {0}")]
    Transport(String),
    #[error("gateway: unexpected response shape: {0}")]
    BadResponse(String),
    #[error("replay miss for request {tag} (digest {digest})")]
    ReplayMiss { tag: String, digest: String },
    #[error("{path}:{line}: malformed cassette record: {message}")]
    CassetteMalformed {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("stub generator has no handler for request tag {0}")]
    UnknownStubTag(String),

    // -- model output validation --
    #[error("prediction invalid ({code:?}): {detail}")]
    PredictionInvalid {
        code: ValidationCode,
        detail: String,
    },
    #[error("unrecognized action token {0:?}")]
    UnrecognizedAction(String),

    // -- internal --
    #[error("invariant violation: {0}")]
    Invariant(String),
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 data, 3 gateway, 4 internal.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            Config(_) | MissingEnvVar { .. } | InvalidParams(_) => 1,
            Io { .. }
            | MalformedRow { .. }
            | DuplicateDate { .. }
            | NonPositivePrice { .. }
            | EmptyWindow { .. }
            | InsufficientHistory { .. }
            | UnknownFund(_)
            | DataGap { .. }
            | UndefinedVolumeRatio { .. }
            | EmptyNavSeries
            | DisjointCalendars(_)
            | InputMismatch(_) => 2,
            MissingCredential { .. }
            | RetriesExhausted { .. }
            | Transport(_)
            | BadResponse(_)
            | ReplayMiss { .. }
            | CassetteMalformed { .. }
            | UnknownStubTag(_)
            | PredictionInvalid { .. }
            | UnrecognizedAction(_) => 3,
            Invariant(_) => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
