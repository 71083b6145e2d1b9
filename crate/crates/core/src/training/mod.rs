//! Optimizer, learning-rate schedule, the co-training step and whole runs.

mod experiment;
mod optim;
mod trainer;

pub use experiment::{
    preset_variants, run_experiment, run_experiment_with, run_single, ExperimentOutcome, RunOutcome,
    METRICS_HEADER, SUMMARY_HEADER,
};
pub use optim::{adamw_update, poly_lr, AdamW, OptimConfig};
pub use trainer::{evaluate_model, train_step, StepSettings, TrainState, Trainer};
