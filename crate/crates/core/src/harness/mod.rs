//! Monte-Carlo experiment harness: scenario configuration, metrics, the
//! paired-seed trial runner, CSV/manifest output and frame dumps.

mod config;
mod dump;
mod metrics;
mod output;
mod runner;

pub use config::{BlockOptions, Method, SimConfig};
pub use dump::{read_frame_dump, write_frame_dump, FrameDump, DUMP_MAGIC};
pub use metrics::{compute_nmse_db, compute_ser, nmse_ratio, symbol_errors, NMSE_FLOOR_DB};
pub use output::{emit_results, manifest_path, read_results, Manifest, CSV_HEADER};
pub use runner::{
    run_experiment, run_experiment_with, ExecutionMode, ExperimentReport, MetricsRow, PointDetail, RunOptions,
};
