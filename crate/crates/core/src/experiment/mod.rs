//! Config-driven scenarios, sweeps and the clearing study.

mod config;
mod run;

pub use config::{parse_config, parse_series, read_series_csv, render_config, Emit, ScenarioConfig, SweepParam, SweepSpec};
pub use run::{
    clearing, clearing_study, dump_riccati, evaluate, riccati, run_scenario, sweep, sweep_rows, validate, write_atomic, write_outputs,
    ScenarioResult, SummaryRow, ValidationReport, CLEARING_NODES, DELTA2,
};
