//! Experiment harness: static evaluation of deployments and schemes, figure
//! presets, INI configuration and CSV output.

pub mod config;
pub mod eval;
pub mod experiment;
pub mod placement;
pub mod presets;
