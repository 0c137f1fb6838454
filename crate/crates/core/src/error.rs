use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: String,
    },

    #[error("cholesky factorization failed for {0}")]
    Cholesky(String),

    #[error("datum {index} rejected: {reason}")]
    Domain { index: usize, reason: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Fitting produced a non-finite objective; carries the flattened
    /// parameter vector at the offending iteration.
    #[error("non-finite ELBO at iteration {iteration}")]
    Divergence { iteration: usize, snapshot: Vec<f64> },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    /// Any error, prefixed with where it happened (e.g. fold and restart).
    #[error("{label}: {source}")]
    Labeled {
        label: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, value: f64, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            value,
            reason: reason.into(),
        }
    }

    pub fn labeled(self, label: impl Into<String>) -> Self {
        Error::Labeled {
            label: label.into(),
            source: Box::new(self),
        }
    }

    /// The innermost error, with labels stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Labeled { source, .. } => source.root(),
            other => other,
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter { .. } => 2,
            Error::Data(_) | Error::Domain { .. } | Error::Dimension(_) | Error::Io { .. } => 3,
            Error::Cholesky(_) | Error::NonFinite(_) | Error::Divergence { .. } => 4,
            Error::Labeled { source, .. } => source.exit_code(),
        }
    }
}
