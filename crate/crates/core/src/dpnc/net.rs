use candle_core::{DType, Device, Tensor};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{ComplexBlock, RngState};
use crate::classic::{depacketize, packetize, BitVector, PacketFrame};
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::nn::{elu, power_normalize, ConvKind, ConvLayer, ParamStore};
use crate::scpnc::{ChannelDraw, SymbolVector};

/// Network sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpncArch {
    /// Symbols per block; each block carries `2 * block_symbols` bits.
    pub block_symbols: usize,
    pub hidden: usize,
    pub kernel: usize,
}

impl Default for DpncArch {
    fn default() -> Self {
        Self {
            block_symbols: 196,
            hidden: 32,
            kernel: 3,
        }
    }
}

impl DpncArch {
    pub fn bits_per_block(&self) -> usize {
        2 * self.block_symbols
    }
}

/// A small stack of 1-D convolutions with ELU between layers.
#[derive(Debug, Clone)]
struct ConvStack(Vec<ConvLayer>);

impl ConvStack {
    fn new(store: &mut ParamStore, name: &str, widths: &[usize], kernel: usize, rng: &mut RngState) -> Result<Self> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| ConvLayer::new(store, &format!("{name}.conv{i}"), ConvKind::Conv1d, w[0], w[1], kernel, 1, rng))
            .collect::<Result<_>>()?;
        Ok(Self(layers))
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.0.iter().enumerate() {
            h = layer.forward(&h)?;
            if i + 1 < self.0.len() {
                h = elu(&h)?;
            }
        }
        Ok(h)
    }
}

/// Modulator (shared by both nodes), relay mapper and demapper (shared).
#[derive(Debug, Clone)]
pub struct DpncParams {
    arch: DpncArch,
    store: ParamStore,
    modulator: ConvStack,
    relay: ConvStack,
    demapper: ConvStack,
}

impl DpncParams {
    pub fn new(arch: DpncArch, seed: u64) -> Result<Self> {
        if arch.block_symbols == 0 || arch.hidden == 0 || arch.kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("invalid D-PNC architecture {arch:?}")));
        }
        let mut store = ParamStore::new(DType::F32);
        let mut rng = RngState::new(seed);
        let h = arch.hidden;
        let modulator = ConvStack::new(&mut store, "mod", &[2, h, h, 2], arch.kernel, &mut rng)?;
        let relay = ConvStack::new(&mut store, "relay", &[2, h, h, 2], arch.kernel, &mut rng)?;
        let demapper = ConvStack::new(&mut store, "demap", &[4, h, h, h, 2], arch.kernel, &mut rng)?;
        Ok(Self {
            arch,
            store,
            modulator,
            relay,
            demapper,
        })
    }

    pub fn arch(&self) -> &DpncArch {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    /// `(b, 2n)` symbols to `(b, 2, n)` channels and back.
    fn to_channels(x: &Tensor) -> Result<Tensor> {
        let (b, w) = x.dims2()?;
        Ok(x.reshape((b, 2, w / 2))?)
    }

    fn from_channels(x: &Tensor) -> Result<Tensor> {
        let (b, c, n) = x.dims3()?;
        Ok(x.reshape((b, c * n))?)
    }

    /// Antipodal bit tensor `(b, 2, n)` (+1 for bit 0) to normalized symbols.
    pub fn modulate_tensor(&self, bits: &Tensor) -> Result<SymbolVector> {
        let x = self.modulator.forward(bits)?;
        Ok(SymbolVector(power_normalize(&Self::from_channels(&x)?)?))
    }

    pub fn relay_tensor(&self, y_r: &SymbolVector) -> Result<SymbolVector> {
        let x = self.relay.forward(&Self::to_channels(&y_r.0)?)?;
        Ok(SymbolVector(power_normalize(&Self::from_channels(&x)?)?))
    }

    /// Logits `(b, 2, n)` of the other node's bits being 1.
    pub fn demap_tensor(&self, x_self: &SymbolVector, y_down: &SymbolVector) -> Result<Tensor> {
        if x_self.0.dims() != y_down.0.dims() {
            return Err(Error::Shape(format!(
                "demapper inputs differ: {:?} vs {:?}",
                x_self.0.dims(),
                y_down.0.dims()
            )));
        }
        let joined = Tensor::cat(&[Self::to_channels(&x_self.0)?, Self::to_channels(&y_down.0)?], 1)?;
        self.demapper.forward(&joined)
    }

    /// Both nodes, uplink, relay, downlink: `(at_a logits, at_b logits)`.
    pub fn exchange_tensor(&self, bits_a: &Tensor, bits_b: &Tensor, draw: &ChannelDraw) -> Result<(Tensor, Tensor, [SymbolVector; 3])> {
        let x_a = self.modulate_tensor(bits_a)?;
        let x_b = self.modulate_tensor(bits_b)?;
        let y_r = draw.uplink(&x_a, &x_b, DType::F32)?;
        let x_r = self.relay_tensor(&y_r)?;
        let (y_a, y_b) = draw.downlink(&x_r, DType::F32)?;
        let at_a = self.demap_tensor(&x_a, &y_a)?;
        let at_b = self.demap_tensor(&x_b, &y_b)?;
        Ok((at_a, at_b, [x_a, x_b, x_r]))
    }
}

/// Bits `(b0 b1)(b2 b3)...` of each row as an antipodal `(rows, 2, n)` tensor:
/// channel 0 holds the first bit of every pair, channel 1 the second.
pub(crate) fn bits_tensor(rows: &[&[u8]]) -> Result<Tensor> {
    let len = rows.first().map_or(0, |r| r.len());
    if len == 0 || !len.is_multiple_of(2) {
        return Err(Error::Framing(format!("D-PNC blocks need an even, non-zero bit count, got {len}")));
    }
    let n = len / 2;
    let mut data = Vec::with_capacity(rows.len() * len);
    for row in rows {
        if row.len() != len {
            return Err(Error::Dimension {
                what: "bits per D-PNC block",
                expected: len,
                got: row.len(),
            });
        }
        for ch in 0..2 {
            data.extend((0..n).map(|k| 1.0 - 2.0 * row[2 * k + ch] as f32));
        }
    }
    Ok(Tensor::from_vec(data, (rows.len(), 2, n), &Device::Cpu)?)
}

/// Hard decisions from `(rows, 2, n)` logits back to bit rows.
pub(crate) fn logits_to_bits(logits: &Tensor) -> Result<Vec<Vec<u8>>> {
    let (rows, _, n) = logits.dims3()?;
    let v = logits.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Ok((0..rows)
        .map(|r| {
            let base = r * 2 * n;
            (0..2 * n).map(|i| u8::from(v[base + (i % 2) * n + i / 2] > 0.0)).collect()
        })
        .collect())
}

fn block_to_tensor(block: &ComplexBlock) -> Result<SymbolVector> {
    let s = block.as_slice();
    let data: Vec<f32> = s.iter().map(|c| c.re as f32).chain(s.iter().map(|c| c.im as f32)).collect();
    Ok(SymbolVector(Tensor::from_vec(data, (1, 2 * s.len()), &Device::Cpu)?))
}

fn tensor_to_block(x: &SymbolVector) -> Result<ComplexBlock> {
    let v = x.0.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let n = v.len() / 2;
    ComplexBlock::new((0..n).map(|k| Complex64::new(v[k], v[n + k])).collect())
}

/// One complex symbol per two bits, unit mean power over the block.
pub fn dpnc_modulate(bits: &BitVector, params: &DpncParams) -> Result<ComplexBlock> {
    if !bits.len().is_multiple_of(2) || bits.is_empty() {
        return Err(Error::Framing(format!("D-PNC needs an even, non-zero bit count, got {}", bits.len())));
    }
    tensor_to_block(&params.modulate_tensor(&bits_tensor(&[bits.as_slice()])?)?)
}

/// Relay network applied to one received block.
pub fn dpnc_relay_map(y_r: &ComplexBlock, params: &DpncParams) -> Result<ComplexBlock> {
    tensor_to_block(&params.relay_tensor(&block_to_tensor(y_r)?)?)
}

/// Hard estimate of the other node's bits from the node's own block and
/// the received broadcast.
pub fn dpnc_decode(x_self: &ComplexBlock, y_down: &ComplexBlock, params: &DpncParams) -> Result<BitVector> {
    if x_self.len() != y_down.len() {
        return Err(Error::Shape(format!(
            "own block has {} symbols, broadcast has {}",
            x_self.len(),
            y_down.len()
        )));
    }
    let logits = params.demap_tensor(&block_to_tensor(x_self)?, &block_to_tensor(y_down)?)?;
    BitVector::new(logits_to_bits(&logits)?.remove(0))
}

fn image_frames(images: &ImageBatch, payload: usize) -> Result<Vec<Vec<PacketFrame>>> {
    (0..images.batch())
        .map(|n| packetize(&BitVector::from_bytes(&images.image_u8(n)), payload))
        .collect()
}

/// Exchanges two image batches at a fixed phase offset. Every image is
/// split into packets of one block each and all packets pass through the
/// networks as one batch (keep batches moderate). Returns node A's and node
/// B's reconstructions (of B's and A's images respectively), the bit error
/// counts `(errors at A, errors at B, bits per node)` and the transmitted
/// symbol tensors for power auditing.
pub fn dpnc_roundtrip(
    img_a: &ImageBatch,
    img_b: &ImageBatch,
    delta_phi: f64,
    sigma2_up: f64,
    sigma2_down: f64,
    params: &DpncParams,
    rng: &mut RngState,
) -> Result<DpncRoundtrip> {
    img_a.ensure_same_shape(img_b)?;
    let payload = params.arch.bits_per_block();
    let frames_a = image_frames(img_a, payload)?;
    let frames_b = image_frames(img_b, payload)?;
    let rows_a: Vec<&[u8]> = frames_a.iter().flatten().map(|f| f.payload_bits.as_slice()).collect();
    let rows_b: Vec<&[u8]> = frames_b.iter().flatten().map(|f| f.payload_bits.as_slice()).collect();
    let rows = rows_a.len();
    let draw = ChannelDraw::sample(rows, 2 * params.arch.block_symbols, vec![delta_phi; rows], sigma2_up, sigma2_down, rng)?;
    let (at_a, at_b, symbols) = params.exchange_tensor(&bits_tensor(&rows_a)?, &bits_tensor(&rows_b)?, &draw)?;
    let dec_a = logits_to_bits(&at_a)?;
    let dec_b = logits_to_bits(&at_b)?;

    let per_image = frames_a.first().map_or(0, |f| f.len());
    let rebuild = |decoded: &[Vec<u8>], template: &[Vec<PacketFrame>]| -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        for (n, frames) in template.iter().enumerate() {
            let rebuilt: Vec<PacketFrame> = frames
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    Ok(PacketFrame {
                        payload_bits: BitVector::new(decoded[n * per_image + k].clone())?,
                        packet_index: f.packet_index,
                        pad_length: f.pad_length,
                    })
                })
                .collect::<Result<_>>()?;
            bytes.extend(depacketize(&rebuilt)?.to_bytes()?);
        }
        Ok(bytes)
    };
    let bytes_at_a = rebuild(&dec_a, &frames_b)?;
    let bytes_at_b = rebuild(&dec_b, &frames_a)?;
    let count = |dec: &[Vec<u8>], sent: &[&[u8]]| -> usize {
        dec.iter()
            .zip(sent)
            .map(|(d, s)| d.iter().zip(s.iter()).filter(|(x, y)| x != y).count())
            .sum()
    };
    let (b, h, w, c) = img_a.shape();
    Ok(DpncRoundtrip {
        at_a: ImageBatch::from_u8(b, h, w, c, &bytes_at_a)?,
        at_b: ImageBatch::from_u8(b, h, w, c, &bytes_at_b)?,
        bit_errors_at_a: count(&dec_a, &rows_b),
        bit_errors_at_b: count(&dec_b, &rows_a),
        bits_per_node: rows * payload,
        symbols,
    })
}

pub struct DpncRoundtrip {
    pub at_a: ImageBatch,
    pub at_b: ImageBatch,
    pub bit_errors_at_a: usize,
    pub bit_errors_at_b: usize,
    /// Bits carried per node, including packet padding.
    pub bits_per_node: usize,
    /// `[x_a, x_b, x_r]`.
    pub symbols: [SymbolVector; 3],
}
