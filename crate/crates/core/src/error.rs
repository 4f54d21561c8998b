use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix `{0}` is not positive semi-definite")]
    NotPositiveSemiDefinite(&'static str),

    #[error("water level search did not converge after {iterations} iterations")]
    NotConverged { iterations: usize },

    #[error("no data: {0}")]
    NoData(String),

    #[error("unknown key `{0}`")]
    UnknownKey(String),

    #[error("key `{key}`: cannot parse `{value}` as {expected}")]
    TypeMismatch {
        key: String,
        value: String,
        expected: &'static str,
    },

    #[error("key `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// Stable machine-readable class used by the command line front end.
    pub fn class(&self) -> &'static str {
        match self {
            Error::InvalidParameter { .. } => "engine.invalid_parameter",
            Error::Dimension(_) => "engine.dimension",
            Error::NotPositiveSemiDefinite(_) => "engine.not_psd",
            Error::NotConverged { .. } => "engine.not_converged",
            Error::NoData(_) => "engine.no_data",
            Error::UnknownKey(_) => "config.unknown_key",
            Error::TypeMismatch { .. } => "config.type_mismatch",
            Error::InvalidConfig { .. } => "config.invariant",
            Error::Io { .. } => "io.unwritable",
        }
    }
}
