use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{context}: {message}")]
    Parse { context: String, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("profile: {0}")]
    Profile(String),
    #[error("power flow: {0}")]
    PowerFlow(String),
    #[error("forecast: {0}")]
    Forecast(String),
    #[error("schedule infeasible: {}", .0.join("; "))]
    Infeasible(Vec<String>),
    #[error("solver: {0}")]
    Solver(String),
    #[error("communication graph: {0}")]
    Graph(String),
    #[error("schedule: {0}")]
    Schedule(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
