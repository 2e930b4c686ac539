//! Weighted cross-entropy training with Adam.

pub mod adam;
pub mod data;
pub mod fit;
pub mod loss;

pub use adam::{AdamConfig, AdamState};
pub use data::{augment, split_dataset, Flip, Sample};
pub use fit::{evaluate, fit, train_loop, write_history_csv, EpochRecord, TrainConfig, TrainOutcome};
pub use loss::{weighted_cross_entropy, ClassWeights, LossOutput, PROB_FLOOR};
