//! QPSK physical-layer network coding at the relay.

use num_complex::Complex64;

use crate::channel::{ChannelRealization, ComplexBlock};
use crate::classic::qpsk::QpskSymbol;

/// Network-coded symbol for a pair: per-axis product of the components,
/// i.e. the XOR of the two Gray-mapped bits on each axis.
pub fn pnc_map(x_a: QpskSymbol, x_b: QpskSymbol) -> QpskSymbol {
    QpskSymbol {
        i: x_a.i * x_b.i,
        q: x_a.q * x_b.q,
    }
}

/// All 16 noise-free superimposed points `h_a x_a + h_b x_b` (unit-power
/// symbols) with their pair and network-coded label.
pub fn superimposed_constellation(chan: &ChannelRealization) -> Vec<(Complex64, QpskSymbol, QpskSymbol, QpskSymbol)> {
    let mut points = Vec::with_capacity(16);
    for a in QpskSymbol::ALL {
        for b in QpskSymbol::ALL {
            let y = chan.h_a * a.unit_power() + chan.h_b * b.unit_power();
            points.push((y, a, b, pnc_map(a, b)));
        }
    }
    points
}

/// Pairs of superimposed points closer than `tol` whose network-coded
/// labels differ.
pub fn conflicting_overlaps(chan: &ChannelRealization, tol: f64) -> Vec<((QpskSymbol, QpskSymbol), (QpskSymbol, QpskSymbol), Complex64)> {
    let points = superimposed_constellation(chan);
    let mut out = Vec::new();
    for (k, p) in points.iter().enumerate() {
        for q in &points[k + 1..] {
            if (p.0 - q.0).norm() < tol && p.3 != q.3 {
                out.push(((p.1, p.2), (q.1, q.2), p.0));
            }
        }
    }
    out
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// XOR channel decoding front end: for every received sample, the LLRs
/// `log P(xor bit = 0) / P(xor bit = 1)` of the I and Q network-coded bits,
/// marginalized over all 16 transmitted pairs with genie channel knowledge.
///
/// With `sigma2 == 0` the max-log form (difference of minimum squared
/// distances) is returned instead; exact ties give 0.
pub fn xor_cd_llr(y_r: &ComplexBlock, chan: &ChannelRealization, sigma2: f64) -> Vec<[f64; 2]> {
    let points = superimposed_constellation(chan);
    let mut out = Vec::with_capacity(y_r.len());
    let mut metric = [0.0f64; 16];
    for y in y_r.as_slice() {
        for (m, p) in metric.iter_mut().zip(&points) {
            *m = (y - p.0).norm_sqr();
        }
        let mut llr = [0.0; 2];
        for (axis, slot) in llr.iter_mut().enumerate() {
            let label = |p: &QpskSymbol| if axis == 0 { p.i } else { p.q };
            if sigma2 > 0.0 {
                let mut plus = Vec::with_capacity(8);
                let mut minus = Vec::with_capacity(8);
                for (m, p) in metric.iter().zip(&points) {
                    let v = -m / sigma2;
                    if label(&p.3) > 0 {
                        plus.push(v)
                    } else {
                        minus.push(v)
                    }
                }
                *slot = log_sum_exp(&plus) - log_sum_exp(&minus);
            } else {
                let mut d_plus = f64::INFINITY;
                let mut d_minus = f64::INFINITY;
                for (m, p) in metric.iter().zip(&points) {
                    if label(&p.3) > 0 {
                        d_plus = d_plus.min(*m);
                    } else {
                        d_minus = d_minus.min(*m);
                    }
                }
                *slot = d_minus - d_plus;
            }
        }
        out.push(llr);
    }
    out
}
