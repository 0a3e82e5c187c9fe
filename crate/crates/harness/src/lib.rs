//! Benchmark engine behind the `splatpose` command: seeded trials over
//! rotation buckets, ablations, and report files.

pub mod bench;
pub mod config;
pub mod gradcheck;
pub mod io;
pub mod report;

use std::path::PathBuf;

pub use bench::{
    run_benchmark, run_trial, sample_initial_pose, summarize, BenchmarkReport, BenchmarkRun,
    TrialOutcome, TrialRecord,
};
pub use config::{Ablation, BenchmarkConfig, MatcherChoice};
pub use report::{emit_report, emit_timing};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {reason}")]
    Image { path: PathBuf, reason: String },
    #[error(transparent)]
    Scene(#[from] splatpose_core::scene::SceneError),
    #[error(transparent)]
    Geometry(#[from] splatpose_core::geometry::GeometryError),
    #[error(transparent)]
    Match(#[from] splatpose_core::matcher::MatchError),
    #[error(transparent)]
    Optimizer(#[from] splatpose_core::optimizer::OptimizerError),
}
