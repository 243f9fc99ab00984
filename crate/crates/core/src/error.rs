use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration mismatch: {0}")]
    Config(String),

    #[error("{context} ({path}): {source}")]
    Io {
        context: &'static str,
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error in {path}: {reason}")]
    Schema { path: PathBuf, reason: String },

    #[error("non-finite loss at step {step}: {diagnostics}")]
    NonFiniteLoss { step: u64, diagnostics: String },

    #[error("landmark alignment failed: rms residual {residual_px:.3} px exceeds {threshold_px:.3} px (best yaw {yaw_deg:.2}, pitch {pitch_deg:.2}, scale {scale:.4})")]
    AlignmentFailed {
        residual_px: f64,
        threshold_px: f64,
        yaw_deg: f64,
        pitch_deg: f64,
        scale: f64,
    },

    #[error("fit diverged at iteration {iteration}: error {error:.6e} grew too far from initial {initial:.6e}")]
    FitDiverged {
        iteration: usize,
        error: f64,
        initial: f64,
        trace: Vec<f64>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(context: &'static str, path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            context,
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
