//! Command-line pipeline around `gridmend-core`: simulate grid state
//! trajectories with stealthy attacks, train the correction autoencoder,
//! evaluate it, and run the online correction loop over stdio.

pub mod commands;
pub mod config;
pub mod report;

pub use commands::{
    cmd_attack_demo, cmd_correct_stream, cmd_evaluate, cmd_simulate, cmd_train, Artifacts,
};
pub use config::{ConfigError, RunConfig, SeedStream, OUT_DIR_ENV};
pub use report::EvalReport;
