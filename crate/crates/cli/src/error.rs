use thiserror::Error;

/// Command failures, grouped by exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{0}")]
    Divergence(String),

    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Divergence(_) => 3,
            Self::Io(_) => 4,
        }
    }
}

impl From<afkit::Error> for CliError {
    fn from(e: afkit::Error) -> Self {
        use afkit::Error as E;
        let msg = e.to_string();
        match e {
            E::Config(_) | E::Shape(_) => Self::Config(msg),
            E::NonFinite(_) | E::Divergence(_) => Self::Divergence(msg),
            E::Io(_) | E::Wav(_) | E::Json(_) | E::Format(_) => Self::Io(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<toml::de::Error> for CliError {
    fn from(e: toml::de::Error) -> Self {
        Self::Config(format!("config file: {e}"))
    }
}

impl From<toml::ser::Error> for CliError {
    fn from(e: toml::ser::Error) -> Self {
        Self::Config(format!("config serialization: {e}"))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
