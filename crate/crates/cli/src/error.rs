use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(patternforge::Error),
    Io { path: PathBuf, source: std::io::Error },
    Json { path: PathBuf, source: serde_json::Error },
    /// An upstream artifact is missing or was produced by another config.
    Stale(String),
    Schema(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Json { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Stale(m) => write!(f, "stale artifact: {m}"),
            CliError::Schema(m) => write!(f, "schema violation: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<patternforge::Error> for CliError {
    fn from(e: patternforge::Error) -> Self {
        match e {
            patternforge::Error::Config(m) => CliError::Config(m),
            other => CliError::Core(other),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
