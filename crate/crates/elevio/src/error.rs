//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// IMU timestamps must be strictly increasing.
    #[error("non-monotonic timestamp: dt = {dt} s at t = {t} s")]
    NonMonotonicTime { t: f64, dt: f64 },

    /// IMU stream gap larger than the propagation cap.
    #[error("IMU data gap of {dt} s at t = {t} s exceeds {max} s")]
    DataGap { t: f64, dt: f64, max: f64 },

    /// Too few plane correspondences to run a scan update.
    #[error("degenerate update: {matched} of {attempted} points matched (need {min})")]
    DegenerateUpdate {
        matched: usize,
        attempted: usize,
        min: usize,
    },

    /// Scan preprocessing removed every point.
    #[error("empty scan at t = {t} s after preprocessing")]
    EmptyScan { t: f64 },

    /// Not enough points for the requested operation.
    #[error("insufficient points: have {have}, need {need}")]
    InsufficientPoints { have: usize, need: usize },

    /// Static initialization rejected a moving platform.
    #[error("platform not static during initialization: accel norm spread {spread} m/s^2")]
    NotStatic { spread: f64 },

    /// Evaluation was asked for a metric without a reference.
    #[error("missing reference: provide ground truth or a reference height")]
    MissingReference,

    /// Invalid configuration or scenario.
    #[error("config error: {0}")]
    Config(String),

    /// Numerical failure (e.g. factorization of an indefinite matrix).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed input file.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
