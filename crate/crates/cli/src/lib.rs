//! Library behind the `timgcn` command-line tool: run configuration,
//! dataset preparation, result tables and the five workflows.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod table;

pub use commands::{cmd_ablate, cmd_eval, cmd_gradcheck, cmd_synth, cmd_train, EvalArgs, Overrides};
pub use config::RunConfig;
pub use dataset::{Dataset, Split};
pub use error::{CliError, Result};
pub use table::ResultTable;
