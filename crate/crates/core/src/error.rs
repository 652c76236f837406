use std::io;

use thiserror::Error;

/// Everything that can go wrong inside the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input contains no valid pixels")]
    EmptyInput,
    #[error("no positive (label 1) valid pixels")]
    NoPositives,
    #[error("no negative (label 0) valid pixels")]
    NoNegatives,
    #[error("alpha too large for sample: quantile index {k} exceeds {m} positives")]
    AlphaTooLargeForSample { k: usize, m: usize },
    #[error("alpha {alpha} too small for {m} positives: floor(alpha * (m + 1)) = 0")]
    AlphaTooSmallForSample { alpha: f64, m: usize },
    #[error("infeasible calibration: {0}")]
    Infeasible(String),
    #[error("degenerate prevalence pi1 = {0}; both classes are required")]
    DegeneratePrevalence(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("duplicate image id {0}")]
    DuplicateImageId(u32),
    #[error("bad magic {found:?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: [u8; 4] },
    #[error("unsupported container version {0}")]
    BadVersion(u16),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("score {score} out of range [0, 1] (image {image_id}, pixel {index})")]
    ScoreOutOfRange {
        image_id: u32,
        index: usize,
        score: f64,
    },
    #[error("bad label {0}; expected -1, 0 or 1")]
    BadLabel(i64),
    #[error("bad CSV header {0:?}")]
    BadHeader(String),
    #[error("bad field on line {line}: {message}")]
    BadField { line: usize, message: String },
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
    #[error("AUROC {0} out of range [0.5, 1)")]
    AurocOutOfRange(f64),
    #[error("alpha {0} out of range (0, 1)")]
    AlphaOutOfRange(f64),
    #[error("too few positives: expected {expected:.1} per trial, need at least 20")]
    TooFewPositives { expected: f64 },
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error("report format error: {0}")]
    Format(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Validation,
    Infeasible,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) => ErrorClass::Io,
            Error::AlphaTooLargeForSample { .. }
            | Error::AlphaTooSmallForSample { .. }
            | Error::Infeasible(_)
            | Error::MetricUndefined(_)
            | Error::TooFewPositives { .. }
            | Error::CheckFailed(_) => ErrorClass::Infeasible,
            _ => ErrorClass::Validation,
        }
    }

    /// 1 for I/O, 2 for validation, 3 for statistical infeasibility.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Io => 1,
            ErrorClass::Validation => 2,
            ErrorClass::Infeasible => 3,
        }
    }
}
