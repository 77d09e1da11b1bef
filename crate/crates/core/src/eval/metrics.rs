//! Image and bit fidelity metrics.

use crate::classic::BitVector;
use crate::error::{Error, Result};
use crate::image::ImageBatch;

/// `10 log10(max² / mse)`; `+∞` when `mse == 0`.
pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / mse).log10()
    }
}

/// Per-image PSNR with both batches de-normalized from `[0, 1]` to
/// `[0, max_value]` (255 for 8-bit images).
pub fn psnr(m: &ImageBatch, m_hat: &ImageBatch, max_value: f64) -> Result<Vec<f64>> {
    if !(max_value > 0.0) || !max_value.is_finite() {
        return Err(Error::Domain(format!("PSNR peak value must be positive, got {max_value}")));
    }
    m.ensure_same_shape(m_hat)?;
    Ok((0..m.batch())
        .map(|n| {
            let a = m.image(n);
            let b = m_hat.image(n);
            let sum: f64 = a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = (x as f64 - y as f64) * max_value;
                    d * d
                })
                .sum();
            psnr_from_mse(sum / a.len() as f64, max_value)
        })
        .collect())
}

/// Fraction of differing bits.
pub fn ber(sent: &BitVector, received: &BitVector) -> Result<f64> {
    if sent.len() != received.len() {
        return Err(Error::Dimension {
            what: "bit streams compared for BER",
            expected: sent.len(),
            got: received.len(),
        });
    }
    if sent.is_empty() {
        return Err(Error::Domain("BER of empty bit streams".into()));
    }
    Ok(sent.xor(received)?.count_ones() as f64 / sent.len() as f64)
}

/// Mean and sample standard deviation of the finite values, and the count
/// of infinite ones. The mean is `+∞` when every value is infinite.
pub fn summarize_psnr(values: &[f64]) -> (f64, f64, usize) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let n_inf = values.len() - finite.len();
    if finite.is_empty() {
        return (f64::INFINITY, 0.0, n_inf);
    }
    let mean = finite.iter().sum::<f64>() / finite.len() as f64;
    let std = if finite.len() > 1 {
        (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (finite.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std, n_inf)
}
