//! Dataset ingestion, batching, losses and the training loop.

pub mod batches;
pub mod loss;
pub mod mnist;
pub mod trainer;

pub use batches::{make_batches, OffsetSampling, TrainingTriplet, TripletBatches};
pub use loss::{exchange_loss, mse, scpnc_loss, scpnc_loss_with_draw, ChannelNoise};
pub use mnist::{load_dataset, load_labels, Split};
pub use trainer::{train, validation_loss, RunPaths, TrainConfig, TrainEvent, TrainSummary};
