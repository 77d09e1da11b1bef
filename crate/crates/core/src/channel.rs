//! Complex-baseband two-way relay channel.
//!
//! Both end nodes transmit in the same uplink slot and the relay observes
//! `h_a * x_a + h_b * x_b + n`. In the downlink slot the relay broadcasts a
//! single block that each node receives through its own AWGN channel.
//!
//! Noise variances are total complex variances: each of the real and
//! imaginary parts carries half of `sigma2`. SNR is per node, i.e. the
//! per-symbol power of one transmitter over the noise variance.

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// A non-empty block of finite complex baseband symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexBlock(Vec<Complex64>);

impl ComplexBlock {
    pub fn new(symbols: Vec<Complex64>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Domain("complex block must hold at least one symbol".into()));
        }
        if let Some(k) = symbols.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::Domain(format!("non-finite symbol at index {k}")));
        }
        Ok(Self(symbols))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.0
    }

    /// Mean of `|x|^2` over the block.
    pub fn mean_power(&self) -> f64 {
        self.0.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.0.len() as f64
    }
}

impl std::ops::Index<usize> for ComplexBlock {
    type Output = Complex64;

    fn index(&self, k: usize) -> &Complex64 {
        &self.0[k]
    }
}

/// Channel state for one uplink/downlink exchange.
///
/// The channel is block-constant: one realization covers a whole packet or
/// image pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelRealization {
    pub h_a: Complex64,
    pub h_b: Complex64,
    pub h_down_a: Complex64,
    pub h_down_b: Complex64,
    /// Relative phase offset of node B with respect to node A, in `[0, 2π)`.
    pub delta_phi: f64,
    pub sigma2_up: f64,
    pub sigma2_down: f64,
}

impl ChannelRealization {
    /// Equal received power at the relay: `h_a = 1`, `h_b = e^{jΔφ}`, unit
    /// downlink gains.
    pub fn equal_power(delta_phi: f64, sigma2_up: f64, sigma2_down: f64) -> Result<Self> {
        for (name, v) in [("sigma2_up", sigma2_up), ("sigma2_down", sigma2_down)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !delta_phi.is_finite() {
            return Err(Error::Domain(format!("phase offset must be finite, got {delta_phi}")));
        }
        let delta_phi = delta_phi.rem_euclid(TAU);
        Ok(Self {
            h_a: Complex64::new(1.0, 0.0),
            h_b: Complex64::from_polar(1.0, delta_phi),
            h_down_a: Complex64::new(1.0, 0.0),
            h_down_b: Complex64::new(1.0, 0.0),
            delta_phi,
            sigma2_up,
            sigma2_down,
        })
    }

    /// Equal-power channel at the given per-node SNRs for unit-power symbols.
    pub fn from_snr_db(delta_phi: f64, snr_up_db: f64, snr_down_db: f64) -> Result<Self> {
        Self::equal_power(
            delta_phi,
            snr_to_noise_variance(snr_up_db, 1.0)?,
            snr_to_noise_variance(snr_down_db, 1.0)?,
        )
    }

    pub fn noiseless(delta_phi: f64) -> Self {
        Self::equal_power(delta_phi, 0.0, 0.0).expect("zero noise is valid")
    }

    /// The realization seen with the roles of A and B exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            h_a: self.h_b,
            h_b: self.h_a,
            h_down_a: self.h_down_b,
            h_down_b: self.h_down_a,
            delta_phi: (-self.delta_phi).rem_euclid(TAU),
            ..*self
        }
    }
}

/// Seeded random stream behind every noise draw and phase sample.
///
/// Independent sub-streams are derived with [`RngState::fork`], so parallel
/// Monte Carlo can partition work by index without sharing state.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of 32-bit words consumed so far.
    pub fn position(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Deterministic child stream `index`, independent of this stream's
    /// position.
    pub fn fork(&self, index: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        Self {
            seed: self.seed,
            rng,
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Circularly-symmetric complex Gaussian sample with total variance
    /// `sigma2`.
    pub fn complex_gaussian(&mut self, sigma2: f64) -> Complex64 {
        let s = (0.5 * sigma2).sqrt();
        let re = self.standard_normal();
        let im = self.standard_normal();
        Complex64::new(s * re, s * im)
    }

    /// Uniform sample in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }
}

impl RngCore for RngState {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

fn add_noise(y: &mut [Complex64], sigma2: f64, rng: &mut RngState) {
    if sigma2 > 0.0 {
        for v in y.iter_mut() {
            *v += rng.complex_gaussian(sigma2);
        }
    }
}

/// Superimposed uplink reception at the relay.
pub fn uplink_superimpose(
    x_a: &ComplexBlock,
    x_b: &ComplexBlock,
    chan: &ChannelRealization,
    rng: &mut RngState,
) -> Result<ComplexBlock> {
    if x_a.len() != x_b.len() {
        return Err(Error::Dimension {
            what: "uplink block lengths",
            expected: x_a.len(),
            got: x_b.len(),
        });
    }
    let mut y: Vec<Complex64> = x_a
        .as_slice()
        .iter()
        .zip(x_b.as_slice())
        .map(|(a, b)| chan.h_a * a + chan.h_b * b)
        .collect();
    add_noise(&mut y, chan.sigma2_up, rng);
    ComplexBlock::new(y)
}

/// Relay broadcast received at node A and node B, with independent noise.
pub fn downlink_broadcast(
    x_r: &ComplexBlock,
    chan: &ChannelRealization,
    rng: &mut RngState,
) -> Result<(ComplexBlock, ComplexBlock)> {
    let mut y_a: Vec<Complex64> = x_r.as_slice().iter().map(|x| chan.h_down_a * x).collect();
    add_noise(&mut y_a, chan.sigma2_down, rng);
    let mut y_b: Vec<Complex64> = x_r.as_slice().iter().map(|x| chan.h_down_b * x).collect();
    add_noise(&mut y_b, chan.sigma2_down, rng);
    Ok((ComplexBlock::new(y_a)?, ComplexBlock::new(y_b)?))
}

/// Relative phase offset drawn uniformly from `[0, 2π)`.
pub fn sample_phase_offset(rng: &mut RngState) -> f64 {
    // uniform() < 1, but the product can still round up to TAU
    let phi = rng.uniform() * TAU;
    if phi >= TAU {
        0.0
    } else {
        phi
    }
}

/// Total complex noise variance giving `snr_db` for a transmitter of the
/// given per-symbol power.
pub fn snr_to_noise_variance(snr_db: f64, signal_power: f64) -> Result<f64> {
    if !(signal_power > 0.0) || !signal_power.is_finite() {
        return Err(Error::Domain(format!(
            "signal power must be positive and finite, got {signal_power}"
        )));
    }
    if !snr_db.is_finite() {
        return Err(Error::Domain(format!("SNR must be finite, got {snr_db}")));
    }
    Ok(signal_power / 10f64.powf(snr_db / 10.0))
}
