//! Q-function approximation and the agents that control the RIS environment.

pub mod error;
pub mod nn;
pub mod rl;

pub use error::{LearnError, Result};
