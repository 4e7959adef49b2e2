use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid action {0}, expected 0, 1 or 2")]
    InvalidAction(usize),
    #[error("invalid qubit index {index} for a {n_qubits}-qubit register")]
    QubitIndex { index: usize, n_qubits: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Configuration problems are reported separately from runtime failures
    /// by the command line front end.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Toml(_) | Error::Domain(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
