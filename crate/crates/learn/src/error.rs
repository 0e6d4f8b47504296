use thiserror::Error;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at episode {episode}, step {step}: loss is {loss}; try a smaller learning rate")]
    Diverged { episode: usize, step: usize, loss: f64 },
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Env(#[from] risnoma_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LearnError>;
