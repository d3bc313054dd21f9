//! Batch front end: JSON run configurations in, JSON reports and CSV tables out.

pub mod config;
pub mod fields;
pub mod run;

pub use config::{ConfigError, RunConfig, Task, Violation};
pub use run::{execute, write_outputs, Emit, Outcome, RunError, Status};
