use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the prediction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("load error in {path}: {message}")]
    Load { path: PathBuf, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("featurization failed: {0}")]
    Featurization(String),

    #[error("optimization failed: {message} (at point {point:?})")]
    Optimization { message: String, point: Vec<f64> },

    #[error("regression failed: {0}")]
    Regression(String),

    #[error("predictor failed: {0}")]
    Predictor(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn load(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures that come from the numerics rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Optimization { .. } | Error::Regression(_) | Error::Predictor(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure_arg {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Argument(format!($($fmt)+)));
        }
    };
}
pub(crate) use ensure_arg;
