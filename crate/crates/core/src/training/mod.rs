//! Batch construction, augmentation, normalization, Adam and the epoch loop.

mod adam;
mod sampling;
mod stats;
mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use sampling::{augment, build_batch, sample_subsequence, Augmentation, Pair};
pub use stats::ChannelStats;
pub use trainer::{train, train_with, BatchRecord, TrainConfig, TrainState, TrainingLog};
