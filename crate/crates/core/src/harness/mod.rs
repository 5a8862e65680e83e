//! Configuration-driven experiments: seeded repeats and sweeps, trace and
//! summary files, and bound reports.

mod config;
mod report;
mod run;

pub use config::{
    parse_config, AlgorithmSpec, Budget, DataSource, DecaySpec, ExperimentConfig, Init, OracleSpec, Sweep, SweepValues,
    SyntheticObjectiveSpec, HOLDOUT_SEED_OFFSET,
};
pub use report::{
    bound_checks, compare_report, report_from_dir, summarize, summary_csv, BoundCheck, DirReport, Stat, SummaryRow,
    SUMMARY_HEADER,
};
pub use run::{
    build_oracle, execute, initial_point, run_experiment, run_options, run_seed, run_specs, sweep_points,
    with_workers, BuiltOracle, ExperimentOutput, RunPlan, RunResult, RunSpec, SweepPoint, RUNS_HEADER, WORKERS_ENV,
};
