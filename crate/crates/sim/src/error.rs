use darkstate_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(#[from] CoreError),
    /// Experiment geometry or input inconsistent with the requested analysis.
    #[error("invalid input: {0}")]
    Input(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) | SimError::Input(_) => 2,
            SimError::Numerical(_) => 3,
            SimError::Io(_) => 4,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SimError::Config(_) => "config",
            SimError::Input(_) => "input",
            SimError::Numerical(_) => "numerical",
            SimError::Io(_) => "io",
        }
    }
}

impl From<csv::Error> for SimError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => SimError::Io(io),
            other => SimError::Io(std::io::Error::other(format!("{other:?}"))),
        }
    }
}
