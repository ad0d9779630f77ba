//! Declarative ablation sweeps and the benchmark protocol, with CSV output.

pub mod config;
pub mod sweep;
pub mod table1;

pub use config::{preset, DatasetSpec, RunConfig, SweepConfig, PRESETS};
pub use sweep::{
    aggregate, aggregates_to_csv, mean_std, read_rows, rows_to_csv, run_sweep, Aggregate, LambdaMode, SweepAxis,
    SweepResult, SweepRow, SweepSpec, CSV_HEADER, LAMBDA_SWEEP_NOISE, NOISE_SWEEP_LAMBDA,
};
pub use table1::{published, table1_protocol, write_table1, Table1Row, PUBLISHED_OA};
