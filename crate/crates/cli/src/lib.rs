//! Batch runner for qstat scenarios: parse a TOML scenario, evaluate every
//! requested check over the parameter grid and write structured reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod report;
pub mod run;
pub mod scenario;

pub use error::CliError;
pub use report::{CheckRecord, RunReport, Status, Summary};
pub use run::{run, Overrides, RunOptions};
pub use scenario::{load_scenario, parse_scenario, Scenario};

/// Process exit codes.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const FAILURES: i32 = 1;
    pub const INVALID: i32 = 2;
}
