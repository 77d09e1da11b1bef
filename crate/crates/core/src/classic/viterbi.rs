//! Soft-decision Viterbi decoder for the (133, 171) code.
//!
//! LLRs follow `log P(bit = 0) / P(bit = 1)`; a positive value favours 0.
//! Branch metrics are correlations `±llr / 2`, so the decoder is the exact
//! ML sequence decoder for independent bit observations.

use crate::classic::bits::BitVector;
use crate::classic::conv::{branch_output, next_state, ConvCodeSpec, Termination, NUM_STATES};
use crate::error::{Error, Result};

struct Trellis {
    /// `[next_state][which predecessor]` -> (predecessor state, input bit, output pair).
    pred: [[(usize, u8, (u8, u8)); 2]; NUM_STATES],
}

impl Trellis {
    fn new() -> Self {
        let mut pred = [[(0usize, 0u8, (0u8, 0u8)); 2]; NUM_STATES];
        let mut fill = [0usize; NUM_STATES];
        for state in 0..NUM_STATES {
            for input in 0..2u8 {
                let ns = next_state(state, input);
                pred[ns][fill[ns]] = (state, input, branch_output(state, input));
                fill[ns] += 1;
            }
        }
        debug_assert!(fill.iter().all(|&f| f == 2));
        Self { pred }
    }
}

fn trellis() -> &'static Trellis {
    static TRELLIS: std::sync::OnceLock<Trellis> = std::sync::OnceLock::new();
    TRELLIS.get_or_init(Trellis::new)
}

/// Decodes `llrs` (two per trellis step) back to information bits.
pub fn viterbi_decode(llrs: &[f64], spec: &ConvCodeSpec) -> Result<BitVector> {
    let steps = llrs.len() / 2;
    let info_len = spec.info_len(llrs.len())?;
    if llrs.iter().any(|l| l.is_nan()) {
        return Err(Error::Domain("NaN in decoder input".into()));
    }
    let trellis = trellis();

    let mut metric = [f64::NEG_INFINITY; NUM_STATES];
    metric[0] = 0.0;
    let mut next = [0.0f64; NUM_STATES];
    // bit s of decisions[t] selects the predecessor of state s at step t
    let mut decisions: Vec<u64> = Vec::with_capacity(steps);

    for t in 0..steps {
        let (l0, l1) = (0.5 * llrs[2 * t], 0.5 * llrs[2 * t + 1]);
        let bm = |(c0, c1): (u8, u8)| {
            (if c0 == 0 { l0 } else { -l0 }) + (if c1 == 0 { l1 } else { -l1 })
        };
        let mut word = 0u64;
        for (ns, preds) in trellis.pred.iter().enumerate() {
            let m0 = metric[preds[0].0] + bm(preds[0].2);
            let m1 = metric[preds[1].0] + bm(preds[1].2);
            if m1 > m0 {
                next[ns] = m1;
                word |= 1 << ns;
            } else {
                next[ns] = m0;
            }
        }
        decisions.push(word);
        // keep metrics bounded on long blocks
        let best = next.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (m, n) in metric.iter_mut().zip(next.iter()) {
            *m = n - best;
        }
    }

    let mut state = match spec.termination {
        Termination::ZeroTail => 0,
        Termination::Truncated => metric
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (s, &m)| if m > acc.1 { (s, m) } else { acc })
            .0,
    };
    let mut bits = vec![0u8; steps];
    for t in (0..steps).rev() {
        let which = ((decisions[t] >> state) & 1) as usize;
        let (prev, input, _) = trellis.pred[state][which];
        bits[t] = input;
        state = prev;
    }
    bits.truncate(info_len);
    BitVector::new(bits)
}

/// LLRs of magnitude `confidence` agreeing with a hard codeword.
pub fn hard_llrs(coded: &BitVector, confidence: f64) -> Vec<f64> {
    coded
        .as_slice()
        .iter()
        .map(|&b| if b == 0 { confidence } else { -confidence })
        .collect()
}
