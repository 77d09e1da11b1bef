//! Conventional bit-oriented PNC baseline.

pub mod bits;
pub mod conv;
pub mod pipeline;
pub mod pnc;
pub mod qpsk;
pub mod viterbi;

pub use bits::{depacketize, packetize, BitVector, PacketFrame, PACKET_PAYLOAD_BITS};
pub use conv::{conv_encode, ConvCodeSpec, Termination};
pub use pipeline::{conv_pnc_exchange, conv_pnc_roundtrip, conv_pnc_uplink, ConvPncConfig, ExchangeBits};
pub use pnc::{conflicting_overlaps, pnc_map, superimposed_constellation, xor_cd_llr};
pub use qpsk::{qpsk_hard_demodulate, qpsk_llr, qpsk_modulate, QpskSymbol};
pub use viterbi::viterbi_decode;
