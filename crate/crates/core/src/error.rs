use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("usage: {0}")]
    Usage(String),

    #[error("config: {path}: {msg}")]
    Config { path: String, msg: String },

    #[error("dataio: format: {0}")]
    Format(String),

    #[error("dataio: validation: {0}")]
    Validation(String),

    #[error("wireproto: {0}")]
    Protocol(String),

    #[error("runner: {0}")]
    Run(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("hdf5: {0}")]
    Hdf5(#[from] hdf5_metno::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn protocol(msg: impl Into<String>) -> Self {
        Error::Protocol(msg.into())
    }

    pub fn run(msg: impl Into<String>) -> Self {
        Error::Run(msg.into())
    }

    /// Process exit code for this error: 1 usage, 2 runtime, 3 validation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Config { .. } => 1,
            Error::Validation(_) | Error::Format(_) => 3,
            _ => 2,
        }
    }
}
