//! Gray-mapped QPSK. Bit pair `(b_I, b_Q)` maps each axis `0 -> +1`,
//! `1 -> -1`, scaled by `1/√2` for unit average power.

use std::f64::consts::FRAC_1_SQRT_2;

use num_complex::Complex64;

use crate::channel::ComplexBlock;
use crate::classic::bits::BitVector;
use crate::error::{Error, Result};

/// A QPSK point before power scaling: both components are ±1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QpskSymbol {
    pub i: i8,
    pub q: i8,
}

impl QpskSymbol {
    pub const ALL: [QpskSymbol; 4] = [
        QpskSymbol { i: 1, q: 1 },
        QpskSymbol { i: 1, q: -1 },
        QpskSymbol { i: -1, q: 1 },
        QpskSymbol { i: -1, q: -1 },
    ];

    pub fn new(i: i8, q: i8) -> Result<Self> {
        if i.abs() != 1 || q.abs() != 1 {
            return Err(Error::Domain(format!("QPSK components must be ±1, got ({i}, {q})")));
        }
        Ok(Self { i, q })
    }

    pub fn from_bits(b_i: u8, b_q: u8) -> Self {
        let axis = |b: u8| if b == 0 { 1 } else { -1 };
        Self { i: axis(b_i), q: axis(b_q) }
    }

    pub fn bits(&self) -> (u8, u8) {
        ((self.i < 0) as u8, (self.q < 0) as u8)
    }

    /// Unscaled point `i + jq`.
    pub fn point(&self) -> Complex64 {
        Complex64::new(self.i as f64, self.q as f64)
    }

    /// Unit-power transmitted value.
    pub fn unit_power(&self) -> Complex64 {
        self.point() * FRAC_1_SQRT_2
    }
}

pub fn qpsk_symbols(bits: &BitVector) -> Result<Vec<QpskSymbol>> {
    if !bits.len().is_multiple_of(2) {
        return Err(Error::Framing(format!("QPSK needs an even bit count, got {}", bits.len())));
    }
    if bits.is_empty() {
        return Err(Error::Framing("cannot modulate zero bits".into()));
    }
    Ok(bits
        .as_slice()
        .chunks_exact(2)
        .map(|p| QpskSymbol::from_bits(p[0], p[1]))
        .collect())
}

pub fn qpsk_modulate(bits: &BitVector) -> Result<ComplexBlock> {
    ComplexBlock::new(qpsk_symbols(bits)?.iter().map(QpskSymbol::unit_power).collect())
}

/// Nearest-point decisions after removing the channel gain `h`.
pub fn qpsk_hard_demodulate(y: &ComplexBlock, h: Complex64) -> BitVector {
    let mut bits = Vec::with_capacity(2 * y.len());
    for s in y.as_slice() {
        let z = s * h.conj();
        bits.push((z.re < 0.0) as u8);
        bits.push((z.im < 0.0) as u8);
    }
    BitVector::new(bits).expect("hard decisions are bits")
}

/// Per-bit LLRs for single-user reception through gain `h` with complex
/// noise variance `sigma2`. With `sigma2 == 0` the unit-variance scaling is
/// used, which only matters up to a positive factor.
pub fn qpsk_llr(y: &ComplexBlock, h: Complex64, sigma2: f64) -> Vec<f64> {
    let scale = 2.0 * std::f64::consts::SQRT_2 / if sigma2 > 0.0 { sigma2 } else { 1.0 };
    let mut llrs = Vec::with_capacity(2 * y.len());
    for s in y.as_slice() {
        let z = s * h.conj();
        llrs.push(scale * z.re);
        llrs.push(scale * z.im);
    }
    llrs
}
