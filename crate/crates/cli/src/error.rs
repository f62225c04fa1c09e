use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 1,
        }
    }

    /// Classifies a core error raised while loading or decoding data.
    pub fn data(e: deepbound::Error) -> Self {
        match e {
            deepbound::Error::Numeric(m) => CliError::Numeric(m),
            deepbound::Error::NonFinite { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<deepbound::Error> for CliError {
    fn from(e: deepbound::Error) -> Self {
        use deepbound::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Domain(m) => CliError::Config(m),
            E::Numeric(m) => CliError::Numeric(m),
            E::NonFinite { .. } => CliError::Numeric(e.to_string()),
            E::Format { .. } => CliError::Data(e.to_string()),
            E::Io(io) => CliError::Io(io.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
