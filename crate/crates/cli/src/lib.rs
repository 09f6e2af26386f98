//! Command-line front end: experiment configs, checkpoints and the
//! train / eval / count-params / synth commands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;

pub use checkpoint::Checkpoint;
pub use commands::{cmd_count_params, cmd_eval, cmd_synth, cmd_train, prepare_dataset, Dataset, EvalRecord, StopReason, TrainSummary};
pub use config::{recipe, ExperimentConfig, RECIPES};
pub use error::{CliError, CliResult};
