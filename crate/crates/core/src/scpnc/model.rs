//! The five SC-PNC networks and the two-way forward pass through the relay
//! channel.
//!
//! Parameters are grouped by prefix: `alpha` (semantic encoder), `beta`
//! (channel encoder), `delta` (relay PNC decoder), `eta` (channel decoder)
//! and `phi` (semantic decoder). Both end nodes share the same encoder and
//! decoder parameters.

use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::channel::RngState;
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::nn::{elu, power_normalize, sigmoid, ConvKind, ConvLayer, Dense, ParamStore, ResBlock, ResBlockSpec};

pub const FEATURE_CHANNELS: usize = 16;
pub const PARAM_GROUPS: [&str; 5] = ["alpha", "beta", "delta", "eta", "phi"];

/// Architecture hyperparameters fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScpncArch {
    /// Width of the fully connected layer; `m / 2` complex symbols per image.
    pub m: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for ScpncArch {
    fn default() -> Self {
        Self {
            m: 392,
            height: 28,
            width: 28,
            channels: 1,
        }
    }
}

impl ScpncArch {
    pub fn symbols_per_image(&self) -> usize {
        self.m / 2
    }

    pub fn feature_hw(&self) -> (usize, usize) {
        (self.height.div_ceil(4), self.width.div_ceil(4))
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || !self.m.is_multiple_of(2) {
            return Err(Error::Config(format!("m must be a positive even number, got {}", self.m)));
        }
        if !self.height.is_multiple_of(4) || !self.width.is_multiple_of(4) || self.channels == 0 {
            return Err(Error::Config(format!(
                "image size {}x{}x{} must have sides divisible by 4",
                self.height, self.width, self.channels
            )));
        }
        Ok(())
    }
}

/// Encoder-side features, `b × 16 × h/4 × w/4` (channels first).
#[derive(Debug, Clone)]
pub struct SemanticFeatures(pub Tensor);

/// Complex symbols as a `(b, m)` real tensor: real parts then imaginary
/// parts of the `m / 2` symbols of each image.
#[derive(Debug, Clone)]
pub struct SymbolVector(pub Tensor);

fn tx_block(filters: (usize, usize), strides: (usize, usize)) -> ResBlockSpec {
    ResBlockSpec {
        kind: ConvKind::Conv2d,
        filters,
        kernel: 3,
        strides,
    }
}

fn relay_block() -> ResBlockSpec {
    ResBlockSpec {
        kind: ConvKind::Conv1d,
        filters: (32, 32),
        kernel: 3,
        strides: (1, 1),
    }
}

fn rx_block(filters: (usize, usize), strides: (usize, usize)) -> ResBlockSpec {
    ResBlockSpec {
        kind: ConvKind::ConvTranspose2d,
        filters,
        kernel: 3,
        strides,
    }
}

pub struct ScpncNet {
    arch: ScpncArch,
    store: ParamStore,
    // alpha
    enc_stem: ConvLayer,
    enc_blocks: [ResBlock; 2],
    // beta
    chan_enc_blocks: [ResBlock; 2],
    chan_enc_dense: Dense,
    // delta
    relay_blocks: [ResBlock; 2],
    relay_dense: Dense,
    // eta
    chan_dec_dense: Dense,
    chan_dec_blocks: [ResBlock; 2],
    // phi
    dec_blocks: [ResBlock; 2],
    dec_out: ConvLayer,
}

impl ScpncNet {
    pub fn new(arch: ScpncArch, dtype: DType, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut store = ParamStore::new(dtype);
        let mut rng = RngState::new(seed);
        let rng = &mut rng;
        let s = &mut store;
        let (fh, fw) = arch.feature_hw();
        let feat = FEATURE_CHANNELS * fh * fw;

        let enc_stem = ConvLayer::new(s, "alpha.stem", ConvKind::Conv2d, arch.channels, 8, 3, 1, rng)?;
        let enc_blocks = [
            ResBlock::new(s, "alpha.block0", 8, tx_block((8, 8), (2, 1)), rng)?,
            ResBlock::new(s, "alpha.block1", 8, tx_block((16, 16), (2, 1)), rng)?,
        ];
        let chan_enc_blocks = [
            ResBlock::new(s, "beta.block0", FEATURE_CHANNELS, tx_block((32, 32), (1, 1)), rng)?,
            ResBlock::new(s, "beta.block1", 32, tx_block((32, 32), (1, 1)), rng)?,
        ];
        let chan_enc_dense = Dense::new(s, "beta.dense", 32 * fh * fw, arch.m, rng)?;
        let relay_blocks = [
            ResBlock::new(s, "delta.block0", 2, relay_block(), rng)?,
            ResBlock::new(s, "delta.block1", 32, relay_block(), rng)?,
        ];
        let relay_dense = Dense::new(s, "delta.dense", 32 * arch.m / 2, arch.m, rng)?;
        let chan_dec_dense = Dense::new(s, "eta.dense", 2 * arch.m, feat, rng)?;
        let chan_dec_blocks = [
            ResBlock::new(s, "eta.block0", FEATURE_CHANNELS, rx_block((16, 16), (1, 1)), rng)?,
            ResBlock::new(s, "eta.block1", 16, rx_block((16, 16), (1, 1)), rng)?,
        ];
        let dec_blocks = [
            ResBlock::new(s, "phi.block0", FEATURE_CHANNELS, rx_block((4, 4), (1, 2)), rng)?,
            ResBlock::new(s, "phi.block1", 4, rx_block((8, 8), (1, 2)), rng)?,
        ];
        let dec_out = ConvLayer::new(s, "phi.out", ConvKind::ConvTranspose2d, 8, arch.channels, 3, 1, rng)?;

        Ok(Self {
            arch,
            store,
            enc_stem,
            enc_blocks,
            chan_enc_blocks,
            chan_enc_dense,
            relay_blocks,
            relay_dense,
            chan_dec_dense,
            chan_dec_blocks,
            dec_blocks,
            dec_out,
        })
    }

    pub fn arch(&self) -> &ScpncArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn dtype(&self) -> DType {
        self.store.dtype()
    }

    /// Images as a channels-first tensor `(b, c, h, w)`.
    pub fn image_tensor(&self, images: &ImageBatch) -> Result<Tensor> {
        let (b, h, w, c) = images.shape();
        if (h, w, c) != (self.arch.height, self.arch.width, self.arch.channels) {
            return Err(Error::Shape(format!(
                "expected {}x{}x{} images, got {h}x{w}x{c}",
                self.arch.height, self.arch.width, self.arch.channels
            )));
        }
        let t = Tensor::from_slice(images.pixels(), (b, h, w, c), self.store.device())?;
        Ok(t.permute((0, 3, 1, 2))?.contiguous()?.to_dtype(self.dtype())?)
    }

    /// Inverse of [`Self::image_tensor`]; values are clamped into `[0, 1]`.
    pub fn tensor_to_images(&self, t: &Tensor) -> Result<ImageBatch> {
        let (b, c, h, w) = t.dims4()?;
        let pixels: Vec<f32> = t
            .permute((0, 2, 3, 1))?
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?
            .into_iter()
            .map(|p| p.clamp(0.0, 1.0))
            .collect();
        ImageBatch::new(b, h, w, c, pixels)
    }

    pub fn semantic_encode(&self, images: &Tensor) -> Result<SemanticFeatures> {
        let (_, c, h, w) = images.dims4()?;
        if (c, h, w) != (self.arch.channels, self.arch.height, self.arch.width) {
            return Err(Error::Shape(format!("semantic encoder got input {:?}", images.dims())));
        }
        let mut x = elu(&self.enc_stem.forward(images)?)?;
        for block in &self.enc_blocks {
            x = block.forward(&x)?;
        }
        Ok(SemanticFeatures(x))
    }

    /// Raw dense output before the power normalization layer.
    pub fn channel_encode_raw(&self, f: &SemanticFeatures) -> Result<Tensor> {
        self.check_features(&f.0)?;
        let mut x = f.0.clone();
        for block in &self.chan_enc_blocks {
            x = block.forward(&x)?;
        }
        let b = x.dim(0)?;
        self.chan_enc_dense.forward(&x.reshape((b, ()))?)
    }

    pub fn channel_encode(&self, f: &SemanticFeatures) -> Result<SymbolVector> {
        Ok(SymbolVector(power_normalize(&self.channel_encode_raw(f)?)?))
    }

    /// Relay network: superimposed reception to normalized broadcast symbols.
    pub fn semantic_pnc_decode(&self, y_r: &SymbolVector) -> Result<SymbolVector> {
        let (b, m) = y_r.0.dims2()?;
        self.check_width(m)?;
        // real and imaginary halves become the two input channels
        let mut x = y_r.0.reshape((b, 2, m / 2))?;
        for block in &self.relay_blocks {
            x = block.forward(&x)?;
        }
        let x = self.relay_dense.forward(&x.reshape((b, ()))?)?;
        Ok(SymbolVector(power_normalize(&x)?))
    }

    /// Node-side channel decoder: own transmitted symbols plus the received
    /// broadcast give the other node's features.
    pub fn channel_decode(&self, x_self: &SymbolVector, y_down: &SymbolVector) -> Result<SemanticFeatures> {
        let (b, m) = x_self.0.dims2()?;
        if y_down.0.dims2()? != (b, m) {
            return Err(Error::Shape(format!(
                "channel decoder inputs differ: {:?} vs {:?}",
                x_self.0.dims(),
                y_down.0.dims()
            )));
        }
        self.check_width(m)?;
        let (fh, fw) = self.arch.feature_hw();
        let joined = Tensor::cat(&[&x_self.0, &y_down.0], 1)?;
        let mut x = elu(&self.chan_dec_dense.forward(&joined)?)?.reshape((b, FEATURE_CHANNELS, fh, fw))?;
        for block in &self.chan_dec_blocks {
            x = block.forward(&x)?;
        }
        Ok(SemanticFeatures(x))
    }

    /// Reconstruction in `[0, 1]`, `(b, c, h, w)`.
    pub fn semantic_decode(&self, f_hat: &SemanticFeatures) -> Result<Tensor> {
        self.check_features(&f_hat.0)?;
        let mut x = f_hat.0.clone();
        for block in &self.dec_blocks {
            x = block.forward(&x)?;
        }
        sigmoid(&self.dec_out.forward(&x)?)
    }

    fn check_features(&self, f: &Tensor) -> Result<()> {
        let (fh, fw) = self.arch.feature_hw();
        let (_, c, h, w) = f.dims4()?;
        if (c, h, w) != (FEATURE_CHANNELS, fh, fw) {
            return Err(Error::Shape(format!(
                "expected features {FEATURE_CHANNELS}x{fh}x{fw}, got {:?}",
                f.dims()
            )));
        }
        Ok(())
    }

    fn check_width(&self, m: usize) -> Result<()> {
        if m != self.arch.m {
            return Err(Error::Dimension {
                what: "symbol tensor width (2 x symbols per image)",
                expected: self.arch.m,
                got: m,
            });
        }
        Ok(())
    }

    /// Both nodes' encoders, the superimposed uplink, the relay network,
    /// the broadcast and both decoders.
    pub fn exchange(&self, m_a: &Tensor, m_b: &Tensor, draw: &ChannelDraw) -> Result<ExchangeOutput> {
        let x_a = self.channel_encode(&self.semantic_encode(m_a)?)?;
        let x_b = self.channel_encode(&self.semantic_encode(m_b)?)?;
        let y_r = draw.uplink(&x_a, &x_b, self.dtype())?;
        let x_r = self.semantic_pnc_decode(&y_r)?;
        let (y_a, y_b) = draw.downlink(&x_r, self.dtype())?;
        // node A recovers B's image and vice versa
        let at_a = self.semantic_decode(&self.channel_decode(&x_a, &y_a)?)?;
        let at_b = self.semantic_decode(&self.channel_decode(&x_b, &y_b)?)?;
        Ok(ExchangeOutput {
            at_a,
            at_b,
            x_a,
            x_b,
            x_r,
        })
    }
}

pub struct ExchangeOutput {
    /// Node A's reconstruction of B's images.
    pub at_a: Tensor,
    /// Node B's reconstruction of A's images.
    pub at_b: Tensor,
    pub x_a: SymbolVector,
    pub x_b: SymbolVector,
    pub x_r: SymbolVector,
}

/// One batch worth of channel randomness: per-pair relative phase and the
/// noise samples of the uplink and both downlinks, all `(b, m)` with real
/// parts first.
#[derive(Debug, Clone)]
pub struct ChannelDraw {
    pub batch: usize,
    pub m: usize,
    /// Phase of node A's uplink gain per pair (0 in the equal-power model).
    pub phases_a: Vec<f64>,
    /// Phase of node B's uplink gain per pair, i.e. the relative offset.
    pub phases: Vec<f64>,
    pub noise_up: Vec<f32>,
    pub noise_a: Vec<f32>,
    pub noise_b: Vec<f32>,
}

impl ChannelDraw {
    pub fn sample(batch: usize, m: usize, phases: Vec<f64>, sigma2_up: f64, sigma2_down: f64, rng: &mut RngState) -> Result<Self> {
        if phases.len() != batch {
            return Err(Error::Dimension {
                what: "phase offsets per batch",
                expected: batch,
                got: phases.len(),
            });
        }
        let mut noise = |sigma2: f64| -> Vec<f32> {
            let sd = (0.5 * sigma2).sqrt();
            (0..batch * m).map(|_| (sd * rng.standard_normal()) as f32).collect()
        };
        let noise_up = noise(sigma2_up);
        let noise_a = noise(sigma2_down);
        let noise_b = noise(sigma2_down);
        Ok(Self {
            batch,
            m,
            phases_a: vec![0.0; batch],
            phases,
            noise_up,
            noise_a,
            noise_b,
        })
    }

    fn tensor(&self, data: &[f32], dtype: DType) -> Result<Tensor> {
        Ok(Tensor::from_slice(data, (self.batch, self.m), &candle_core::Device::Cpu)?.to_dtype(dtype)?)
    }

    /// The same draw with the roles of A and B exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            batch: self.batch,
            m: self.m,
            phases_a: self.phases.clone(),
            phases: self.phases_a.clone(),
            noise_up: self.noise_up.clone(),
            noise_a: self.noise_b.clone(),
            noise_b: self.noise_a.clone(),
        }
    }

    /// Rotates each row of `x` by its phase.
    fn rotate(&self, x: &SymbolVector, phases: &[f64], dtype: DType) -> Result<(Tensor, Tensor)> {
        let n = self.m / 2;
        let dev = candle_core::Device::Cpu;
        let (re, im) = (x.0.narrow(1, 0, n)?, x.0.narrow(1, n, n)?);
        if phases.iter().all(|&p| p == 0.0) {
            return Ok((re, im));
        }
        let cos: Vec<f64> = phases.iter().map(|p| p.cos()).collect();
        let sin: Vec<f64> = phases.iter().map(|p| p.sin()).collect();
        let cos = Tensor::from_vec(cos, (self.batch, 1), &dev)?.to_dtype(dtype)?;
        let sin = Tensor::from_vec(sin, (self.batch, 1), &dev)?.to_dtype(dtype)?;
        let out_re = (re.broadcast_mul(&cos)? - im.broadcast_mul(&sin)?)?;
        let out_im = (re.broadcast_mul(&sin)? + im.broadcast_mul(&cos)?)?;
        Ok((out_re, out_im))
    }

    /// `e^{jφ_a} x_a + e^{jφ_b} x_b + n`.
    pub fn uplink(&self, x_a: &SymbolVector, x_b: &SymbolVector, dtype: DType) -> Result<SymbolVector> {
        let (ar, ai) = self.rotate(x_a, &self.phases_a, dtype)?;
        let (br, bi) = self.rotate(x_b, &self.phases, dtype)?;
        let y = (Tensor::cat(&[(ar + br)?, (ai + bi)?], 1)? + self.tensor(&self.noise_up, dtype)?)?;
        Ok(SymbolVector(y))
    }

    pub fn downlink(&self, x_r: &SymbolVector, dtype: DType) -> Result<(SymbolVector, SymbolVector)> {
        Ok((
            SymbolVector((&x_r.0 + self.tensor(&self.noise_a, dtype)?)?),
            SymbolVector((&x_r.0 + self.tensor(&self.noise_b, dtype)?)?),
        ))
    }
}
