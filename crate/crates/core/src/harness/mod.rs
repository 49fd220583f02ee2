//! Experiment harness: configuration, training loop and reporting.

pub mod config;
pub mod report;
pub mod train;

pub use config::{
    DatasetConfig, DatasetKind, ExperimentConfig, GridConfig, ModelConfig, RegularizerConfig, RegularizerKind,
};
pub use report::{
    grid_search, grid_search_prepared, run_trials, run_trials_prepared, AggregateRow, GridCell, GridReport,
    TrialRecord, TrialSummary, TrialsReport,
};
pub use train::{
    build_network, evaluate, load_data, train, train_prepared, EpochMetrics, Evaluation, PreparedData, TrainOutcome,
};
