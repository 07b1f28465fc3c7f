//! Experiment orchestration: configuration, the per-seed pipeline
//! (data → noise → train → tune → multi-view evaluation), reports and sweeps.

mod config;
mod pipeline;
mod report;
mod sweep;

pub use config::{
    DataSource, ExperimentConfig, Method, ModelConfig, MultiviewConfig, NoiseConfig, TuningConfig,
    DEFAULT_SEEDS,
};
pub use pipeline::{
    init_model, load_source, prepare_data, run_experiment, run_seed, score_methods, stage_seed,
    test_views, train_config_for, train_seed, tune_seed, ModelSidecar, PreparedData, RunOutput,
    SeedOutput,
};
pub use report::{
    mean_std, write_report_csv, write_run, MethodResult, MethodSummary, RunReport, SeedReport,
    TunedParams, REPORT_CSV_HEADER, STD_CONVENTION,
};
pub use sweep::{sweep, write_sweep_csv, SweepAxis, SweepRow, SWEEP_CSV_HEADER};
