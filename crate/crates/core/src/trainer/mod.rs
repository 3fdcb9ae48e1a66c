//! Weighted loss, AdamW, learning-rate schedule, early stopping, per-fold
//! training and cross-fold ensembling.

mod ensemble;
pub mod fold;
pub mod loss;
mod optim;
mod schedule;

pub use ensemble::ensemble_predict;
pub use fold::{
    batch_tensor, epochs_csv, fold_dir, predict_probabilities, task_for_classes, train_fold, EarlyStopping, EpochLog,
    FoldJob, FoldOutcome, FoldResult, ImageStore, Observation,
};
pub use loss::{class_weights, weighted_cross_entropy, ClassWeightVector, WeightedCrossEntropy};
pub use optim::{adamw_step, AdamState};
pub use schedule::{lr_at, TrainConfig};
