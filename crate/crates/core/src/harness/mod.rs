//! Pretraining, fine-tuning, evaluation and the strength sweep.

mod config;
mod sweep;
mod train;

pub use config::{alpha_at, alpha_grid, ExperimentConfig, Schedule, SweepSpec};
pub use sweep::{
    conditions, generate_datasets, mean_std, pretrain_checkpoint_path, run_sweep, run_sweep_with,
    runs_csv, summarize, summary_dat, write_runs_csv, write_summary_csv, Condition,
    ConditionSummary, Datasets, RunRecord, RunStatus, SweepResult, RUNS_HEADER,
};
pub use train::{
    dataset_mse, evaluate, evaluate_predictions, finetune, interleaved_step_times, predict,
    pretrain, references, train, PretrainOutcome, StageSeed, TrainOutcome,
};
