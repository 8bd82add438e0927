use std::path::PathBuf;

/// Failure of a command, grouped by the exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const EXIT_IO: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_SHAPE: i32 = 4;
pub const EXIT_NUMERICAL: i32 = 5;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Format { .. } => EXIT_IO,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Shape(_) => EXIT_SHAPE,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        CliError::Format { path: path.into(), msg: msg.into() }
    }
}

impl From<stscale::Error> for CliError {
    fn from(e: stscale::Error) -> Self {
        use stscale::Error as E;
        match e {
            E::Shape(_) | E::Axis { .. } => CliError::Shape(e.to_string()),
            E::NonFinite(_) | E::Numerical(_) => CliError::Numerical(e.to_string()),
            E::Domain(_) | E::Sizing(_) | E::Grid(_) | E::EmptyMask => CliError::Config(e.to_string()),
        }
    }
}
