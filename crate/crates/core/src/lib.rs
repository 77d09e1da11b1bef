//! Two-way relay channel laboratory: conventional coded PNC, a learned
//! bit-level PNC baseline and semantic PNC with jointly trained networks.

pub mod channel;
pub mod checkpoint;
pub mod classic;
pub mod config;
pub mod dpnc;
pub mod error;
pub mod eval;
pub mod image;
pub mod nn;
pub mod scpnc;
pub mod train;

pub use channel::{ChannelRealization, ComplexBlock, RngState};
pub use error::{Error, Result};
pub use image::ImageBatch;
pub use config::ExperimentConfig;
pub use eval::{MetricsRecord, Scheme, SweepSpec};
pub use scpnc::{ScpncNet, SemanticFeatures, SymbolVector};
pub use train::{TrainConfig, TrainingTriplet};
