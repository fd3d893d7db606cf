//! Training: standardization, window assembly with teacher forcing, losses,
//! Adam, checkpoints, and the black-box baselines.

pub mod adam;
pub mod baseline;
pub mod checkpoint;
pub mod loss;
pub mod stats;
pub mod train;
pub mod windows;

pub use adam::{adam_step, AdamState};
pub use baseline::{train_baseline, BaselineModel};
pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, to_json_17, Checkpoint, FORMAT_VERSION};
pub use loss::{
    loss, loss_d_constraint, loss_full, loss_hybrid, loss_unsupervised, LossNorm, LossVariant, LossWeights, Predictions,
};
pub use stats::{fit_stats, FeatureStats, StandardizationStats};
pub use train::{dataset_loss, init_model, loss_and_gradient, train, train_with, TrainConfig, TrainOutcome};
pub use windows::{backward_rate, first_target, make_windows, window_at, Targets, TrainingWindow};
