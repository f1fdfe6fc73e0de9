use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every module of the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("missing lead column `{0}`")]
    MissingLead(String),

    #[error("time column is not strictly increasing at row {row}")]
    NonMonotoneTime { row: usize },

    #[error("empty client data")]
    EmptyClientData,

    #[error("participation threshold not met: {got} submissions, {required} required")]
    ThresholdNotMet { got: usize, required: usize },

    #[error("missing pairwise seed for clients ({0}, {1})")]
    MissingPairSeed(u32, u32),

    #[error("fixed-point overflow: |{value}| exceeds encodable range")]
    FixedPointOverflow { value: f64 },

    #[error("round {round} aborted: {reason}")]
    RoundAborted { round: usize, reason: String },

    #[error("differential privacy is disabled")]
    DpDisabled,

    #[error("privacy ledger is empty")]
    EmptyLedger,

    #[error(
        "target epsilon {target} unreachable for sigma in [{lo}, {hi}] (eps range [{eps_hi_sigma}, {eps_lo_sigma}])"
    )]
    UnreachableEpsilon {
        target: f64,
        lo: f64,
        hi: f64,
        eps_lo_sigma: f64,
        eps_hi_sigma: f64,
    },

    #[error("undefined statistic: {0}")]
    Undefined(&'static str),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("refusing to overwrite non-empty directory {0}")]
    DirectoryNotEmpty(PathBuf),

    #[error("malformed {kind} file {path}: {reason}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidArgument { .. } => "invalid_argument",
            Error::MissingLead(_) => "missing_lead",
            Error::NonMonotoneTime { .. } => "non_monotone_time",
            Error::EmptyClientData => "empty_client_data",
            Error::ThresholdNotMet { .. } => "threshold_not_met",
            Error::MissingPairSeed(..) => "missing_pair_seed",
            Error::FixedPointOverflow { .. } => "fixed_point_overflow",
            Error::RoundAborted { .. } => "round_aborted",
            Error::DpDisabled => "dp_disabled",
            Error::EmptyLedger => "empty_ledger",
            Error::UnreachableEpsilon { .. } => "unreachable_epsilon",
            Error::Undefined(_) => "undefined",
            Error::Config(_) => "config",
            Error::DirectoryNotEmpty(_) => "directory_not_empty",
            Error::Format { .. } => "format",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
