//! Scenario files, the runner that executes them, and the metrics it
//! writes. A scenario is one TOML file; unknown keys are rejected and every
//! validation error names its key.

mod config;
mod report;
mod run;

pub use config::*;
pub use report::*;
pub use run::{run, sub_seed, RunError};
