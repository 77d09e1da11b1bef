//! Simplified learned bit-level PNC baseline: 1-D convolutional networks
//! over blocks of symbols, two message bits per complex symbol, trained at
//! a single relative phase offset with a per-bit cross-entropy loss.
//!
//! Symbol tensors share the `(b, 2n)` layout of [`crate::scpnc`]: the real
//! parts of a block's `n` symbols followed by the imaginary parts.

mod net;
mod train;

pub use net::{dpnc_decode, dpnc_modulate, dpnc_relay_map, dpnc_roundtrip, DpncArch, DpncParams, DpncRoundtrip};
pub use train::{load_dpnc, save_dpnc, train_dpnc, DpncMeta, DpncTrainConfig, DpncTrainEvent, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
