//! Metrics, the evaluation sweep and report emission.

pub mod metrics;
pub mod report;
pub mod sweep;

pub use metrics::{ber, psnr, psnr_from_mse, summarize_psnr};
pub use report::{emit_report, read_csv, write_csv, ReportPaths, RunInfo, CSV_HEADER};
pub use sweep::{
    run_sweep, scpnc_roundtrip, symbols_per_image, test_pairs, CheckpointSet, Direction, MetricsRecord, Scheme,
    SweepOutcome, SweepSpec,
};
