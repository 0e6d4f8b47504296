//! Tele-traffic demand traces and echo-state-network prediction.

pub mod error;
pub mod esn;
pub mod trace;

pub use error::{Result, TrafficError};
