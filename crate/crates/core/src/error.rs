use std::path::PathBuf;

use thiserror::Error;

/// Which latent regime a message refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Normal,
    Bubble,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Regime::Normal => f.write_str("normal"),
            Regime::Bubble => f.write_str("bubble"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("finite-time singularity: t = {t} is not before the critical time t_c = {t_c}")]
    Singularity { t: f64, t_c: f64 },

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("numerical failure at step {step}: {reason}")]
    NumericalFailure { step: usize, reason: String },

    #[error("degenerate {0} regime: total smoothed weight is zero")]
    DegenerateRegime(Regime),

    #[error("EM iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("collinear regressor: column `{column}` is linearly dependent on earlier columns")]
    Collinearity { column: String },

    #[error("undefined correlation ({statistic}): zero variance")]
    UndefinedCorrelation { statistic: &'static str },

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: missing column `{column}`")]
    Schema { path: PathBuf, column: String },

    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::Parse { .. }
                | Error::Schema { .. }
                | Error::Usage(_)
                | Error::UnknownNode(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
