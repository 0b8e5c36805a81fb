//! Configuration, file formats and experiment orchestration behind the `teng`
//! command-line tool.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod reference_io;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointFile};
pub use config::{ExperimentConfig, IcName};
pub use error::{CliError, Result};
pub use experiment::{
    compute_reference, fit_initial_params, initial_params, reference_for, report, run_benchmark, run_experiment,
    solve, write_run, RunOutput, Setup, StepRow,
};
pub use reference_io::{load_reference, save_reference};
