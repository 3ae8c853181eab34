//! Grid runner: configs, cell execution, the metrics store and reports.

mod config;
mod report;
mod runner;
mod store;
pub mod svg;

pub use config::{canonical_hash, load_config, parse_config, Budget, EnvironmentConfig, ExperimentConfig, Regime};
pub use report::{
    default_sizes, mean_se, regime_report, sweep_report, theory_report, RegimeReport, RegimeRow, SweepAxis, SweepPoint,
    SweepReport, TheorySummary,
};
pub use runner::{cells, run, run_cell, run_config_file, Cell, CellMetrics, RunOptions, RunSummary};
pub use store::{read_records, store_path, MetricsRecord, StoreWriter, SCHEMA_MAJOR, SCHEMA_MINOR, STORE_FILE};
