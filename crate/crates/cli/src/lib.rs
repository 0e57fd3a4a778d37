//! Experiment orchestration for the `mcdd` binary: configuration,
//! leave-one-class-out benchmarks, nu sweeps, latent export, gradient
//! checks and single-model train/score workflows.

pub mod benchmark;
pub mod commands;
pub mod config;
pub mod error;
pub mod export;

pub use benchmark::{load_result, run_benchmark, run_benchmark_with, sweep_nu, BenchmarkResult};
pub use commands::run_cli;
pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
