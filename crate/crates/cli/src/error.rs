use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{origin}:{line}:{column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("task `{task}`: {source}")]
    Task { task: String, source: multifield::Error },
    #[error("unknown series `{requested}`; available: {}", available.join(", "))]
    Series { requested: String, available: Vec<String> },
    #[error("{0} task(s) failed")]
    Failed(usize),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }

    /// 1 for configuration and usage problems, 2 for numerical or task failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Io { .. } | Self::Parse { .. } | Self::Invalid(_) | Self::Series { .. } => 1,
            Self::Task { .. } | Self::Failed(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
