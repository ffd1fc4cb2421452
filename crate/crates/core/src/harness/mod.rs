//! Experiment orchestration behind the command-line tool: configuration,
//! single runs, grid search over fixed weights, combiner sweeps, diagnostic
//! dumps and summary reports.

mod config;
pub mod report;
mod runner;

pub use config::{
    parse_seeds, parse_weights, CorruptionConfig, ExperimentConfig, GridConfig, Reference, SubsampleConfig, DEFAULT_GRID_CAP, OUT_ENV,
};
pub use runner::{
    build_dataset, clean_dataset, diagnose, expand_grid, grid, mean_std, prepare_seed, run, run_cell, stl_references, summarize, sweep,
    write_diagnose, write_grid, write_run, write_sweep, CellResult, DeltaStat, DiagnoseOutput, GridOutput, GridRow,
    RunOutput, RunSummary, SeedContext, SeedMetrics, TaskStat, PROBE_HEADER,
};
