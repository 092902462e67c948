//! Experiment configuration, runs over strategy/seed grids, CSV output.

mod config;
mod csv_out;
mod grid;

pub use config::{
    parse_config, parse_config_str, split_override, CapabilitySpec, DataSpec, ExperimentConfig,
    OUTPUT_ROOT_ENV,
};
pub use csv_out::{
    emit_csv, fmt_float, read_round_csv, read_summary, write_summary, RoundRow, SummaryRow,
    CSV_SCHEMA_VERSION,
};
pub use grid::{
    build_data, build_simulation, mean_std, run_experiment, run_grid, GridCell, GridSummary,
    RunOutput, StrategySpec,
};
