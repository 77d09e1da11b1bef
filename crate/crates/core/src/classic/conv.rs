//! Rate-1/2, constraint length 7 convolutional code with generators
//! (133, 171) in octal, as used by IEEE 802.11.

use crate::classic::bits::BitVector;
use crate::error::{Error, Result};

pub const GENERATORS_OCTAL: (u32, u32) = (0o133, 0o171);
pub const CONSTRAINT_LENGTH: usize = 7;
pub const MEMORY: usize = CONSTRAINT_LENGTH - 1;
pub const NUM_STATES: usize = 1 << MEMORY;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Termination {
    /// `MEMORY` zero bits flush the encoder back to state 0.
    #[default]
    ZeroTail,
    /// No flush; the decoder picks the best final state.
    Truncated,
}

/// The fixed (133, 171) code; only the termination is configurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConvCodeSpec {
    pub termination: Termination,
}

impl ConvCodeSpec {
    pub fn tail_len(&self) -> usize {
        match self.termination {
            Termination::ZeroTail => MEMORY,
            Termination::Truncated => 0,
        }
    }

    /// Coded length for `info_len` information bits.
    pub fn coded_len(&self, info_len: usize) -> usize {
        2 * (info_len + self.tail_len())
    }

    /// Information length for a coded length, if consistent.
    pub fn info_len(&self, coded_len: usize) -> Result<usize> {
        if !coded_len.is_multiple_of(2) || coded_len / 2 <= self.tail_len() {
            return Err(Error::Framing(format!(
                "{coded_len} coded bits do not form a terminated rate-1/2 codeword"
            )));
        }
        Ok(coded_len / 2 - self.tail_len())
    }
}

#[inline]
fn parity(x: u32) -> u8 {
    (x.count_ones() & 1) as u8
}

/// Output pair for `input` entering a register whose previous `MEMORY`
/// inputs are `state` (most recent at bit `MEMORY - 1`).
#[inline]
pub(crate) fn branch_output(state: usize, input: u8) -> (u8, u8) {
    let reg = ((input as u32) << MEMORY) | state as u32;
    (parity(reg & GENERATORS_OCTAL.0), parity(reg & GENERATORS_OCTAL.1))
}

#[inline]
pub(crate) fn next_state(state: usize, input: u8) -> usize {
    ((input as usize) << (MEMORY - 1)) | (state >> 1)
}

/// Encodes `bits`, emitting the (g0, g1) outputs of each step in order.
pub fn conv_encode(bits: &BitVector, spec: &ConvCodeSpec) -> Result<BitVector> {
    if bits.is_empty() {
        return Err(Error::Framing("cannot encode an empty bit vector".into()));
    }
    let mut out = Vec::with_capacity(spec.coded_len(bits.len()));
    let mut state = 0usize;
    let tail = std::iter::repeat_n(0u8, spec.tail_len());
    for u in bits.as_slice().iter().copied().chain(tail) {
        let (c0, c1) = branch_output(state, u);
        out.push(c0);
        out.push(c1);
        state = next_state(state, u);
    }
    BitVector::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Shift-register encoder written from the generator taps directly, one
    /// delay line per output.
    fn reference_encode(bits: &[u8]) -> Vec<u8> {
        let g0 = [1, 0, 1, 1, 0, 1, 1]; // 133 octal, current input first
        let g1 = [1, 1, 1, 1, 0, 0, 1]; // 171 octal
        let mut line = [0u8; 7];
        let mut out = Vec::new();
        for &u in bits.iter().chain([0u8; 6].iter()) {
            line.rotate_right(1);
            line[0] = u;
            let a = line.iter().zip(g0).fold(0, |acc, (x, g)| acc ^ (x & g));
            let b = line.iter().zip(g1).fold(0, |acc, (x, g)| acc ^ (x & g));
            out.push(a);
            out.push(b);
        }
        out
    }

    #[test]
    fn all_zero_in_all_zero_out() {
        let out = conv_encode(&BitVector::zeros(50), &ConvCodeSpec::default()).unwrap();
        assert_eq!(out.len(), 112);
        assert_eq!(out.count_ones(), 0);
    }

    #[test]
    fn impulse_response_interleaves_generators() {
        let mut bits = vec![0u8; 10];
        bits[0] = 1;
        let out = conv_encode(&BitVector::new(bits.clone()).unwrap(), &ConvCodeSpec::default()).unwrap();
        assert_eq!(out.as_slice(), reference_encode(&bits).as_slice());
        let g0: Vec<u8> = out.as_slice().iter().step_by(2).take(7).copied().collect();
        let g1: Vec<u8> = out.as_slice().iter().skip(1).step_by(2).take(7).copied().collect();
        assert_eq!(g0, vec![1, 0, 1, 1, 0, 1, 1]);
        assert_eq!(g1, vec![1, 1, 1, 1, 0, 0, 1]);
        // free distance of the code is 10; the impulse response has weight 10
        assert_eq!(out.count_ones(), 10);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(conv_encode(&BitVector::zeros(0), &ConvCodeSpec::default()).is_err());
    }

    #[test]
    fn truncated_has_no_tail() {
        let spec = ConvCodeSpec {
            termination: Termination::Truncated,
        };
        assert_eq!(conv_encode(&BitVector::zeros(9), &spec).unwrap().len(), 18);
        assert_eq!(spec.info_len(18).unwrap(), 9);
        assert!(ConvCodeSpec::default().info_len(12).is_err());
    }

    proptest! {
        #[test]
        fn matches_reference(bits in proptest::collection::vec(0u8..2, 1..400)) {
            let out = conv_encode(&BitVector::new(bits.clone()).unwrap(), &ConvCodeSpec::default()).unwrap();
            let expected = reference_encode(&bits);
            prop_assert_eq!(out.as_slice(), expected.as_slice());
        }

        #[test]
        fn encoder_is_linear(pair in (1usize..300).prop_flat_map(|n| (
            proptest::collection::vec(0u8..2, n),
            proptest::collection::vec(0u8..2, n),
        ))) {
            let spec = ConvCodeSpec::default();
            let a = BitVector::new(pair.0).unwrap();
            let b = BitVector::new(pair.1).unwrap();
            let lhs = &conv_encode(&a, &spec).unwrap() ^ &conv_encode(&b, &spec).unwrap();
            let rhs = conv_encode(&(&a ^ &b), &spec).unwrap();
            prop_assert_eq!(lhs, rhs);
        }
    }
}
