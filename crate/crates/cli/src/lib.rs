//! Scenario files in, deterministic CSV or JSON-lines reports out.

pub mod config;
pub mod error;
pub mod report;
pub mod run;

pub use config::{apply_override, parse_document, ScenarioConfig, Task};
pub use error::{CliError, EXIT_CHECKS_FAILED, EXIT_OK};
pub use report::{emit_report, render, Format, ReportRow, RunReport};
pub use run::{run_file, run_scenario};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "QERISK_OUT_DIR";
