use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// Numeric failure, naming the offending behavior index when known.
    #[error("numeric failure{}: {msg}", match behavior { Some(k) => format!(" (behavior {k})"), None => String::new() })]
    Numeric { behavior: Option<usize>, msg: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric {
            behavior: None,
            msg: msg.into(),
        }
    }

    pub fn numeric_behavior(k: usize, msg: impl Into<String>) -> Self {
        Error::Numeric {
            behavior: Some(k),
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric, 1 other.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) | Error::InvalidInput(_) | Error::Io(_) => 3,
            Error::Numeric { .. } => 4,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Data(e.to_string())
    }
}
