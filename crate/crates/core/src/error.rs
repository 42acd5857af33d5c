use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, GtvvError>;

#[derive(Debug, Error)]
pub enum GtvvError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed direction file {path}: {reason}")]
    DirectionFile { path: PathBuf, reason: String },

    #[error("frame {frame} is below the reference floor in every bin")]
    SilentFrame { frame: usize },

    #[error("least-squares system is rank deficient at bin {bin}, channel {channel} (source too stationary)")]
    EstimatorDegenerate { bin: usize, channel: usize },

    #[error("spectrum is not Hermitian-consistent: imaginary residue {residue:.3e} (relative) in channel {channel}")]
    InconsistentSpectrum { channel: usize, residue: f64 },

    #[error("series expansion invalid: |g*beta| = {magnitude} >= 1 for wavefront {wavefront}")]
    ExpansionInvalid { wavefront: usize, magnitude: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl GtvvError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        GtvvError::InvalidArgument(msg.into())
    }

    /// True for errors caused by bad input or configuration rather than by
    /// the numerics of a run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            GtvvError::Config(_)
                | GtvvError::InvalidArgument(_)
                | GtvvError::DirectionFile { .. }
                | GtvvError::Json(_)
        )
    }
}
