//! Physical layer and control environment for RIS-assisted downlink NOMA.

pub mod channel;
pub mod env;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod noma;
pub mod precoding;
pub mod units;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, C64};
