use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Facs(#[from] crate::facs::FacsError),
    #[error(transparent)]
    Registration(#[from] crate::registration::RegistrationError),
    #[error(transparent)]
    Geometric(#[from] crate::geometric::GeometricError),
    #[error(transparent)]
    Hog(#[from] crate::hog::HogError),
    #[error(transparent)]
    Temporal(#[from] crate::temporal::TemporalError),
    #[error(transparent)]
    Rvm(#[from] crate::rvm::RvmError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
    #[error(transparent)]
    Evaluation(#[from] crate::evaluation::EvalError),
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("leakage audit failed: {0}")]
    Leakage(String),
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn is_io(&self) -> bool {
        use crate::config::ConfigError;
        use crate::evaluation::EvalError;
        use crate::temporal::TemporalError;
        match self {
            Error::Io { .. } => true,
            Error::Dataset(e) => e.is_io(),
            Error::Config(ConfigError::Io { .. }) => true,
            Error::Evaluation(EvalError::Io { .. }) => true,
            Error::Temporal(TemporalError::Io { .. }) => true,
            _ => false,
        }
    }

    /// 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.is_io() {
            2
        } else {
            1
        }
    }
}
