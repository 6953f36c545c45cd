//! Error types shared across the toolkit.

use thiserror::Error;

/// Unified error type for signal, synthesis, dataset, and model operations.
#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Requested band falls (partly) outside the buffer's Nyquist interval.
    #[error("band [{low_hz}, {high_hz}] Hz outside Nyquist range ±{nyquist_hz} Hz")]
    BandOutOfRange {
        low_hz: f64,
        high_hz: f64,
        nyquist_hz: f64,
    },

    /// Buffer power is exactly zero; a dB reading would be -inf.
    #[error("signal power is zero over the requested band")]
    NegligiblePower,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// SINR/power calibration failed to converge within the iteration bound.
    #[error("calibration did not converge: {0}")]
    CalibrationFailed(String),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },

    #[error("train/test split leakage: {0}")]
    SplitLeakage(String),

    /// Window/hop pair does not satisfy the energy-COLA condition.
    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
