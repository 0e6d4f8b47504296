use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrafficError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("ill-posed readout: {0}")]
    IllPosed(String),
    #[error("model has no trained readout")]
    Untrained,
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("malformed model file: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, TrafficError>;
