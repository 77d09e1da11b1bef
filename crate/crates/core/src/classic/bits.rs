use std::ops::BitXor;

use crate::error::{Error, Result};

/// Payload bits per packet: 49 pixels, so an MNIST image fills 16 packets.
pub const PACKET_PAYLOAD_BITS: usize = 392;

/// Ordered bits, each 0 or 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct BitVector(Vec<u8>);

impl BitVector {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if let Some(k) = bits.iter().position(|&b| b > 1) {
            return Err(Error::Domain(format!("bit {k} has value {}", bits[k])));
        }
        Ok(Self(bits))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0; len])
    }

    /// Unpacks bytes MSB first.
    pub fn from_bytes(bytes: &[u8]) -> Self {
        let mut bits = Vec::with_capacity(bytes.len() * 8);
        for &byte in bytes {
            for k in (0..8).rev() {
                bits.push((byte >> k) & 1);
            }
        }
        Self(bits)
    }

    /// Packs bits MSB first; the length must be a multiple of 8.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.0.len().is_multiple_of(8) {
            return Err(Error::Framing(format!("{} bits do not fill whole bytes", self.0.len())));
        }
        Ok(self
            .0
            .chunks_exact(8)
            .map(|c| c.iter().fold(0u8, |acc, &b| (acc << 1) | b))
            .collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b == 1).count()
    }

    pub fn xor(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::Dimension {
                what: "xor operand lengths",
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(Self(self.0.iter().zip(&other.0).map(|(a, b)| a ^ b).collect()))
    }
}

impl BitXor for &BitVector {
    type Output = BitVector;

    /// Panics on length mismatch; use [`BitVector::xor`] for a checked version.
    fn bitxor(self, rhs: &BitVector) -> BitVector {
        self.xor(rhs).expect("xor of bit vectors with different lengths")
    }
}

/// One fixed-size packet of a message; the last packet is zero-padded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PacketFrame {
    pub payload_bits: BitVector,
    pub packet_index: usize,
    pub pad_length: usize,
}

/// Splits `bits` into frames of `payload_len` bits, zero-padding the last.
pub fn packetize(bits: &BitVector, payload_len: usize) -> Result<Vec<PacketFrame>> {
    if payload_len == 0 {
        return Err(Error::Framing("packet payload length must be positive".into()));
    }
    if bits.is_empty() {
        return Err(Error::Framing("cannot packetize an empty message".into()));
    }
    Ok(bits
        .as_slice()
        .chunks(payload_len)
        .enumerate()
        .map(|(packet_index, chunk)| {
            let mut payload = chunk.to_vec();
            let pad_length = payload_len - chunk.len();
            payload.resize(payload_len, 0);
            PacketFrame {
                payload_bits: BitVector(payload),
                packet_index,
                pad_length,
            }
        })
        .collect())
}

/// Reassembles frames in index order and strips the padding.
pub fn depacketize(frames: &[PacketFrame]) -> Result<BitVector> {
    let mut out = Vec::new();
    for (k, frame) in frames.iter().enumerate() {
        if frame.packet_index != k {
            return Err(Error::Framing(format!("frame {k} carries index {}", frame.packet_index)));
        }
        let bits = frame.payload_bits.as_slice();
        if frame.pad_length > bits.len() || (k + 1 < frames.len() && frame.pad_length != 0) {
            return Err(Error::Framing(format!("frame {k} has invalid padding {}", frame.pad_length)));
        }
        out.extend_from_slice(&bits[..bits.len() - frame.pad_length]);
    }
    Ok(BitVector(out))
}
