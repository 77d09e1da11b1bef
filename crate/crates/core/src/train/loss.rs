//! Reconstruction losses.

use candle_core::Tensor;

use crate::channel::{snr_to_noise_variance, RngState};
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::scpnc::{ChannelDraw, ScpncNet};
use crate::train::batches::TrainingTriplet;

/// Per-image mean squared error over all pixels (and channels).
pub fn mse(m: &ImageBatch, m_hat: &ImageBatch) -> Result<Vec<f64>> {
    m.ensure_same_shape(m_hat)?;
    Ok((0..m.batch())
        .map(|n| {
            let a = m.image(n);
            let b = m_hat.image(n);
            let sum: f64 = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
            sum / a.len() as f64
        })
        .collect())
}

/// Noise levels seen by the networks during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelNoise {
    pub sigma2_up: f64,
    pub sigma2_down: f64,
}

impl ChannelNoise {
    pub fn from_snr_db(snr_db: f64) -> Result<Self> {
        let s = snr_to_noise_variance(snr_db, 1.0)?;
        Ok(Self {
            sigma2_up: s,
            sigma2_down: s,
        })
    }

    pub fn noiseless() -> Self {
        Self {
            sigma2_up: 0.0,
            sigma2_down: 0.0,
        }
    }
}

/// Two-way loss from reconstructions already on the graph:
/// mean over the batch of `MSE(M_A, M̂_A) + MSE(M_B, M̂_B)`, where node B
/// reconstructs `M_A` and node A reconstructs `M_B`.
pub fn exchange_loss(m_a: &Tensor, m_b: &Tensor, m_hat_a: &Tensor, m_hat_b: &Tensor) -> Result<Tensor> {
    if m_a.dims() != m_hat_a.dims() || m_b.dims() != m_hat_b.dims() {
        return Err(Error::Shape(format!(
            "loss operands differ: {:?}/{:?} vs {:?}/{:?}",
            m_a.dims(),
            m_hat_a.dims(),
            m_b.dims(),
            m_hat_b.dims()
        )));
    }
    let la = (m_a - m_hat_a)?.sqr()?.mean_all()?;
    let lb = (m_b - m_hat_b)?.sqr()?.mean_all()?;
    Ok((la + lb)?)
}

/// Full forward pass of one triplet through both uplinks, the relay and
/// both downlinks, with fresh noise from `rng`; returns the scalar loss.
pub fn scpnc_loss(batch: &TrainingTriplet, net: &ScpncNet, noise: &ChannelNoise, rng: &mut RngState) -> Result<Tensor> {
    let draw = ChannelDraw::sample(
        batch.len(),
        net.arch().m,
        batch.delta_phi.clone(),
        noise.sigma2_up,
        noise.sigma2_down,
        rng,
    )?;
    scpnc_loss_with_draw(batch, net, &draw)
}

/// [`scpnc_loss`] with a fixed channel realization.
pub fn scpnc_loss_with_draw(batch: &TrainingTriplet, net: &ScpncNet, draw: &ChannelDraw) -> Result<Tensor> {
    let m_a = net.image_tensor(&batch.m_a)?;
    let m_b = net.image_tensor(&batch.m_b)?;
    let out = net.exchange(&m_a, &m_b, draw)?;
    exchange_loss(&m_a, &m_b, &out.at_b, &out.at_a)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(candle_core::DType::F64)?.to_scalar::<f64>()?)
}
