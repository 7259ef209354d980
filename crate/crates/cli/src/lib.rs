//! Batch front-end: one TOML config describes one reproducible experiment.
//! `run` executes validate → scale → solve → synthesize → certify and writes
//! hashed artifacts; `study` measures convergence under dyadic refinement.

pub mod config;
pub mod pipeline;
pub mod study;

pub use config::RunConfig;
pub use pipeline::{run, PipelineError, RunSummary, ThresholdCheck};
pub use study::{convergence_study, StudyTable};

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "STGAME_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`] when it is set.
pub fn init_threads() -> Result<(), String> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => {
            let n: usize = v.parse().map_err(|_| format!("{THREADS_ENV} must be a positive integer, got `{v}`"))?;
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| e.to_string())
        }
        Err(_) => Ok(()),
    }
}
