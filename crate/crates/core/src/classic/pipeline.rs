//! The conventional coded PNC exchange: packetize, encode, QPSK, XOR-CD at
//! the relay, re-encode and broadcast, single-user decoding at each node and
//! XOR with the node's own packet.

use crate::channel::{downlink_broadcast, uplink_superimpose, ChannelRealization, ComplexBlock, RngState};
use crate::classic::bits::{depacketize, packetize, BitVector, PacketFrame, PACKET_PAYLOAD_BITS};
use crate::classic::conv::{conv_encode, ConvCodeSpec};
use crate::classic::pnc::xor_cd_llr;
use crate::classic::qpsk::{qpsk_llr, qpsk_modulate};
use crate::classic::viterbi::viterbi_decode;
use crate::error::{Error, Result};
use crate::image::ImageBatch;

/// Packet layout and code shared by both nodes and the relay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvPncConfig {
    pub payload_bits: usize,
    pub code: ConvCodeSpec,
}

impl Default for ConvPncConfig {
    fn default() -> Self {
        Self {
            payload_bits: PACKET_PAYLOAD_BITS,
            code: ConvCodeSpec::default(),
        }
    }
}

impl ConvPncConfig {
    /// Channel symbols per packet.
    pub fn symbols_per_packet(&self) -> usize {
        self.code.coded_len(self.payload_bits) / 2
    }

    /// Channel symbols to carry `bits` message bits.
    pub fn symbols_for(&self, bits: usize) -> usize {
        bits.div_ceil(self.payload_bits) * self.symbols_per_packet()
    }
}

fn encode_packet(frame: &PacketFrame, cfg: &ConvPncConfig) -> Result<ComplexBlock> {
    qpsk_modulate(&conv_encode(&frame.payload_bits, &cfg.code)?)
}

/// Relay estimate of one packet's XOR from the superimposed reception.
pub fn relay_decode_packet(y_r: &ComplexBlock, chan: &ChannelRealization, cfg: &ConvPncConfig) -> Result<BitVector> {
    let llrs: Vec<f64> = xor_cd_llr(y_r, chan, chan.sigma2_up).into_iter().flatten().collect();
    viterbi_decode(&llrs, &cfg.code)
}

fn frames_like(template: &[PacketFrame], payloads: Vec<BitVector>) -> Vec<PacketFrame> {
    template
        .iter()
        .zip(payloads)
        .map(|(t, payload_bits)| PacketFrame {
            payload_bits,
            packet_index: t.packet_index,
            pad_length: t.pad_length,
        })
        .collect()
}

fn packetize_pair(a: &BitVector, b: &BitVector, cfg: &ConvPncConfig) -> Result<(Vec<PacketFrame>, Vec<PacketFrame>)> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            what: "message lengths at the two nodes",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok((packetize(a, cfg.payload_bits)?, packetize(b, cfg.payload_bits)?))
}

/// Uplink slot only: the relay's decoded estimate of `a ⊕ b`. Decoded
/// packets are kept even when wrong.
pub fn conv_pnc_uplink(
    a: &BitVector,
    b: &BitVector,
    chan: &ChannelRealization,
    cfg: &ConvPncConfig,
    rng: &mut RngState,
) -> Result<BitVector> {
    let (frames_a, frames_b) = packetize_pair(a, b, cfg)?;
    let mut decoded = Vec::with_capacity(frames_a.len());
    for (fa, fb) in frames_a.iter().zip(&frames_b) {
        let y_r = uplink_superimpose(&encode_packet(fa, cfg)?, &encode_packet(fb, cfg)?, chan, rng)?;
        decoded.push(relay_decode_packet(&y_r, chan, cfg)?);
    }
    depacketize(&frames_like(&frames_a, decoded))
}

/// Bit-level result of one full exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExchangeBits {
    /// Relay's decoded XOR message.
    pub relay_xor: BitVector,
    /// Node A's estimate of B's message.
    pub at_a: BitVector,
    /// Node B's estimate of A's message.
    pub at_b: BitVector,
}

/// Full two-slot exchange of two bit messages.
pub fn conv_pnc_exchange(
    a: &BitVector,
    b: &BitVector,
    chan_up: &ChannelRealization,
    chan_down: &ChannelRealization,
    cfg: &ConvPncConfig,
    rng: &mut RngState,
) -> Result<ExchangeBits> {
    let (frames_a, frames_b) = packetize_pair(a, b, cfg)?;
    let mut relay = Vec::with_capacity(frames_a.len());
    let mut at_a = Vec::with_capacity(frames_a.len());
    let mut at_b = Vec::with_capacity(frames_a.len());
    for (fa, fb) in frames_a.iter().zip(&frames_b) {
        let y_r = uplink_superimpose(&encode_packet(fa, cfg)?, &encode_packet(fb, cfg)?, chan_up, rng)?;
        let xor = relay_decode_packet(&y_r, chan_up, cfg)?;
        let x_r = qpsk_modulate(&conv_encode(&xor, &cfg.code)?)?;
        let (y_a, y_b) = downlink_broadcast(&x_r, chan_down, rng)?;
        let xor_a = viterbi_decode(&qpsk_llr(&y_a, chan_down.h_down_a, chan_down.sigma2_down), &cfg.code)?;
        let xor_b = viterbi_decode(&qpsk_llr(&y_b, chan_down.h_down_b, chan_down.sigma2_down), &cfg.code)?;
        at_a.push(fa.payload_bits.xor(&xor_a)?);
        at_b.push(fb.payload_bits.xor(&xor_b)?);
        relay.push(xor);
    }
    Ok(ExchangeBits {
        relay_xor: depacketize(&frames_like(&frames_a, relay))?,
        at_a: depacketize(&frames_like(&frames_a, at_a))?,
        at_b: depacketize(&frames_like(&frames_a, at_b))?,
    })
}

/// Exchanges two image batches image by image (8 bits per pixel, no
/// source coding). Returns `(at_a, at_b)`: node A's reconstruction of B's
/// images and node B's reconstruction of A's.
///
/// Image `n` uses noise stream `n` forked from a seed drawn from `rng`.
pub fn conv_pnc_roundtrip(
    img_a: &ImageBatch,
    img_b: &ImageBatch,
    chan_up: &ChannelRealization,
    chan_down: &ChannelRealization,
    cfg: &ConvPncConfig,
    rng: &mut RngState,
) -> Result<(ImageBatch, ImageBatch, Vec<ExchangeBits>)> {
    img_a.ensure_same_shape(img_b)?;
    let base = RngState::new(rand::RngCore::next_u64(rng));
    let (b, h, w, c) = img_a.shape();
    let mut bytes_a = Vec::with_capacity(b * h * w * c);
    let mut bytes_b = Vec::with_capacity(b * h * w * c);
    let mut details = Vec::with_capacity(b);
    for n in 0..b {
        let bits_a = BitVector::from_bytes(&img_a.image_u8(n));
        let bits_b = BitVector::from_bytes(&img_b.image_u8(n));
        let mut stream = base.fork(n as u64);
        let ex = conv_pnc_exchange(&bits_a, &bits_b, chan_up, chan_down, cfg, &mut stream)?;
        bytes_a.extend(ex.at_a.to_bytes()?);
        bytes_b.extend(ex.at_b.to_bytes()?);
        details.push(ex);
    }
    Ok((
        ImageBatch::from_u8(b, h, w, c, &bytes_a)?,
        ImageBatch::from_u8(b, h, w, c, &bytes_b)?,
        details,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::f64::consts::FRAC_PI_2;

    fn random_bits(rng: &mut RngState, n: usize) -> BitVector {
        BitVector::new((0..n).map(|_| rng.random_range(0..2u8)).collect()).unwrap()
    }

    fn bit_errors(a: &BitVector, b: &BitVector) -> usize {
        a.xor(b).unwrap().count_ones()
    }

    #[test]
    fn noise_free_uplink_is_exact_xor() {
        let cfg = ConvPncConfig::default();
        let mut rng = RngState::new(20);
        let a = random_bits(&mut rng, 1000);
        let b = random_bits(&mut rng, 1000);
        for deg in [0.0, 30.0, 45.0, 60.0, 120.0] {
            let chan = ChannelRealization::noiseless(f64::to_radians(deg));
            let xor = conv_pnc_uplink(&a, &b, &chan, &cfg, &mut rng).unwrap();
            assert_eq!(xor, &a ^ &b, "offset {deg}");
        }
        let xor = conv_pnc_uplink(&a, &a, &ChannelRealization::noiseless(0.0), &cfg, &mut rng).unwrap();
        assert_eq!(xor.count_ones(), 0);
    }

    #[test]
    fn mismatched_messages_rejected() {
        let cfg = ConvPncConfig::default();
        let mut rng = RngState::new(21);
        let chan = ChannelRealization::noiseless(0.0);
        assert!(conv_pnc_uplink(&BitVector::zeros(8), &BitVector::zeros(16), &chan, &cfg, &mut rng).is_err());
    }

    #[test]
    fn quarter_turn_has_error_floor() {
        let cfg = ConvPncConfig::default();
        let mut rng = RngState::new(22);
        let a = random_bits(&mut rng, 392 * 20);
        let b = random_bits(&mut rng, 392 * 20);
        let chan = ChannelRealization::from_snr_db(FRAC_PI_2, 10.0, 10.0).unwrap();
        let xor = conv_pnc_uplink(&a, &b, &chan, &cfg, &mut rng).unwrap();
        let ber = bit_errors(&xor, &(&a ^ &b)) as f64 / a.len() as f64;
        assert!(ber > 0.01, "ber {ber}");
    }

    #[test]
    fn noise_free_exchange_recovers_images() {
        let cfg = ConvPncConfig::default();
        let mut rng = RngState::new(23);
        let bytes_a: Vec<u8> = (0..2 * 784).map(|_| rng.random()).collect();
        let bytes_b: Vec<u8> = (0..2 * 784).map(|_| rng.random()).collect();
        let img_a = ImageBatch::from_u8(2, 28, 28, 1, &bytes_a).unwrap();
        let img_b = ImageBatch::from_u8(2, 28, 28, 1, &bytes_b).unwrap();
        let chan = ChannelRealization::noiseless(0.0);
        let (at_a, at_b, details) = conv_pnc_roundtrip(&img_a, &img_b, &chan, &chan, &cfg, &mut rng).unwrap();
        assert_eq!(at_a, img_b);
        assert_eq!(at_b, img_a);
        assert_eq!(details.len(), 2);
    }

    #[test]
    fn error_free_decoding_implies_recovery() {
        // moderate SNR: whenever relay and downlink decode without error the
        // node holds exactly the other node's message
        let cfg = ConvPncConfig::default();
        let mut rng = RngState::new(24);
        let chan = ChannelRealization::from_snr_db(0.0, 5.0, 5.0).unwrap();
        for _ in 0..5 {
            let a = random_bits(&mut rng, 392);
            let b = random_bits(&mut rng, 392);
            let ex = conv_pnc_exchange(&a, &b, &chan, &chan, &cfg, &mut rng).unwrap();
            if ex.relay_xor == &a ^ &b {
                let downlink_ok_a = a.xor(&ex.at_a).unwrap() == ex.relay_xor;
                assert_eq!(downlink_ok_a, ex.at_a == b);
            }
        }
    }

    #[test]
    fn symbol_budget() {
        let cfg = ConvPncConfig::default();
        assert_eq!(cfg.symbols_per_packet(), 398);
        assert_eq!(cfg.symbols_for(6272), 16 * 398);
    }
}
