//! Experiment harness for the `cbnn` learner: synthetic environments,
//! regret traces, verification suites and timing.

pub mod bench;
pub mod config;
pub mod env;
pub mod error;
pub mod run;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
