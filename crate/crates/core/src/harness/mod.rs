//! Experiment orchestration: config, the seeded training loop, CSV run logs,
//! summary tables and SVG plots.

mod bench;
mod config;
mod plot;
mod run;
mod runlog;
mod summary;

pub use bench::{detect_bench, detect_stream, found_change, synthetic_stream, BenchConfig, BenchReport, StreamOutcome};
pub use config::{EnvKind, ExperimentConfig};
pub use plot::{emit_plots, LineChart, Series};
pub use run::{run_all, run_experiment, stream_rng, streams};
pub use runlog::{LogRow, RunLog, RunMeta, RUNLOG_MAGIC};
pub use summary::{
    recovery_threshold, run_metrics, summarize, summary_csv, summary_text, RunMetrics, SummaryRow, FINAL_WINDOW,
    PRE_CHANGE_WINDOW,
};
