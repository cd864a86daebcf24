//! Command-line front end for `selboost`: CSV ingestion, declarative run
//! configs, JSON/text reports and simulation studies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod ingest;
pub mod report;
pub mod run;

pub use config::RunConfig;
pub use error::{CliError, Result};
pub use report::Report;
pub use run::{run, run_from_config, RunOptions};
