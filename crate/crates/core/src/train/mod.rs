//! Optimizer, schedule, epoch loop, checkpoints and run configuration.

mod checkpoint;
mod config;
mod optim;
mod session;
mod trainer;

pub use checkpoint::{Checkpoint, Payload, Record, VERSION};
pub use config::{CmimConfig, DataConfig, DataFormat};
pub use optim::{cosine_lr, sgd_step, OptimizerState, MAX_LATENT};
pub use session::{
    diagnostic_batch, load_datasets, load_raw, load_test_set, run, RunOptions, RunSummary, Split, FINAL_CHECKPOINT,
    LAST_CHECKPOINT, METRICS, RESOLVED_CONFIG, TIMING,
};
pub use trainer::{
    checkpoint_config, checkpoint_norm, evaluate, initial_network, load_network, metrics_csv, mi_diagnostic,
    EpochMetrics, TrainStats, Trainer,
};
