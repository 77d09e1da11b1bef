//! The SNR × phase-offset evaluation grid.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{snr_to_noise_variance, ChannelRealization, RngState};
use crate::checkpoint::file_sha256;
use crate::classic::{conv_pnc_roundtrip, BitVector, ConvPncConfig};
use crate::dpnc::{dpnc_roundtrip, load_dpnc, DpncParams};
use crate::error::{Error, Result};
use crate::eval::metrics::{psnr, summarize_psnr};
use crate::image::ImageBatch;
use crate::nn::mean_symbol_power;
use crate::scpnc::{load_checkpoint, ChannelDraw, ScpncNet, SymbolVector};

/// Compared transmission schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ConvPnc,
    DPnc,
    ScPnc,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::ConvPnc, Scheme::DPnc, Scheme::ScPnc];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::ConvPnc => "conv_pnc",
            Scheme::DPnc => "d_pnc",
            Scheme::ScPnc => "sc_pnc",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Scheme::ConvPnc => "Conv-PNC",
            Scheme::DPnc => "D-PNC (simplified baseline)",
            Scheme::ScPnc => "SC-PNC",
        }
    }

    pub fn is_neural(self) -> bool {
        !matches!(self, Scheme::ConvPnc)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme {s:?} (expected conv_pnc, d_pnc or sc_pnc)")))
    }
}

/// Which node's image is being delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// A's image reconstructed at B.
    AToB,
    /// B's image reconstructed at A.
    BToA,
}

impl Direction {
    pub fn name(self) -> &'static str {
        match self {
            Direction::AToB => "A->B",
            Direction::BToA => "B->A",
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A->B" => Ok(Direction::AToB),
            "B->A" => Ok(Direction::BToA),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

/// Evaluation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub snrs_db: Vec<f64>,
    pub offsets_deg: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// Image pairs per cell, drawn from the test split.
    pub test_pairs: usize,
    pub seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            snrs_db: (-3..=6).map(f64::from).collect(),
            offsets_deg: vec![0.0, 45.0, 90.0],
            schemes: Scheme::ALL.to_vec(),
            test_pairs: 1000,
            seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("sweep.{field}: {why}")));
        if self.snrs_db.is_empty() || self.snrs_db.iter().any(|s| !s.is_finite()) {
            return bad("snrs_db", "must be a non-empty list of finite values");
        }
        if self.offsets_deg.is_empty() || self.offsets_deg.iter().any(|s| !s.is_finite()) {
            return bad("offsets_deg", "must be a non-empty list of finite values");
        }
        if self.schemes.is_empty() {
            return bad("schemes", "must not be empty");
        }
        if self.test_pairs == 0 {
            return bad("test_pairs", "must be positive");
        }
        Ok(())
    }

    pub fn num_records(&self) -> usize {
        self.schemes.len() * 2 * self.snrs_db.len() * self.offsets_deg.len()
    }

    /// Noise seed of one cell, independent of the rest of the grid.
    pub fn cell_seed(&self, scheme: Scheme, snr_db: f64, offset_deg: f64) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(scheme.name().as_bytes());
        h.update(snr_db.to_bits().to_le_bytes());
        h.update(offset_deg.to_bits().to_le_bytes());
        u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub scheme: Scheme,
    pub direction: Direction,
    pub snr_db: f64,
    pub delta_phi_deg: f64,
    /// Mean over images with finite PSNR; `+∞` when all are exact.
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub n_inf: usize,
    pub ber: Option<f64>,
    pub n_images: usize,
    pub symbols_per_image: usize,
    pub seed: u64,
}

/// Checkpoint locations for the learned schemes.
#[derive(Debug, Clone, Default)]
pub struct CheckpointSet {
    pub sc_pnc: Option<PathBuf>,
    pub d_pnc: Option<PathBuf>,
}

impl CheckpointSet {
    pub fn path(&self, scheme: Scheme) -> Option<&PathBuf> {
        match scheme {
            Scheme::ConvPnc => None,
            Scheme::DPnc => self.d_pnc.as_ref(),
            Scheme::ScPnc => self.sc_pnc.as_ref(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub records: Vec<MetricsRecord>,
    /// Largest `|mean power − 1|` over every transmitted block of the
    /// learned schemes.
    pub max_power_deviation: f64,
    /// `(scheme, path, sha256)` of each checkpoint used.
    pub checkpoints: Vec<(Scheme, PathBuf, String)>,
}

/// Disjoint `A` and `B` image sets of `pairs` images each, chosen from
/// `test` with a fixed seed.
pub fn test_pairs(test: &ImageBatch, pairs: usize, seed: u64) -> Result<(ImageBatch, ImageBatch)> {
    if 2 * pairs > test.batch() {
        return Err(Error::Config(format!(
            "sweep.test_pairs = {pairs} needs {} test images, have {}",
            2 * pairs,
            test.batch()
        )));
    }
    let mut order: Vec<usize> = (0..test.batch()).collect();
    order.shuffle(&mut RngState::new(seed));
    Ok((test.select(&order[..pairs])?, test.select(&order[pairs..2 * pairs])?))
}

pub const SCPNC_EVAL_BATCH: usize = 128;
pub const DPNC_EVAL_IMAGES: usize = 32;

fn chunk(images: &ImageBatch, start: usize, len: usize) -> Result<ImageBatch> {
    images.select(&(start..start + len).collect::<Vec<_>>())
}

fn power_deviation(symbols: &[&SymbolVector]) -> Result<f64> {
    symbols
        .iter()
        .map(|s| Ok((mean_symbol_power(&s.0)? - 1.0).abs()))
        .try_fold(0.0f64, |acc, d: Result<f64>| Ok(acc.max(d?)))
}

/// Reconstructions of one cell and the bit error counts `(at A, at B, bits per node)`.
struct CellResult {
    at_a: ImageBatch,
    at_b: ImageBatch,
    bit_errors: Option<(usize, usize, usize)>,
    power_deviation: f64,
}

fn concat(parts: Vec<ImageBatch>) -> Result<ImageBatch> {
    let (_, h, w, c) = parts[0].shape();
    let b = parts.iter().map(|p| p.batch()).sum();
    let pixels: Vec<f32> = parts.into_iter().flat_map(|p| p.into_pixels()).collect();
    ImageBatch::new(b, h, w, c, pixels)
}

fn run_conv(a: &ImageBatch, b: &ImageBatch, chan: &ChannelRealization, rng: &mut RngState) -> Result<CellResult> {
    let (at_a, at_b, details) = conv_pnc_roundtrip(a, b, chan, chan, &ConvPncConfig::default(), rng)?;
    let (mut err_a, mut err_b, mut bits) = (0, 0, 0);
    for (n, ex) in details.iter().enumerate() {
        let sent_a = BitVector::from_bytes(&a.image_u8(n));
        let sent_b = BitVector::from_bytes(&b.image_u8(n));
        err_a += ex.at_a.xor(&sent_b)?.count_ones();
        err_b += ex.at_b.xor(&sent_a)?.count_ones();
        bits += sent_a.len();
    }
    Ok(CellResult {
        at_a,
        at_b,
        bit_errors: Some((err_a, err_b, bits)),
        power_deviation: 0.0,
    })
}

fn run_dpnc(
    a: &ImageBatch,
    b: &ImageBatch,
    chan: &ChannelRealization,
    params: &DpncParams,
    rng: &mut RngState,
) -> Result<CellResult> {
    let (mut parts_a, mut parts_b) = (Vec::new(), Vec::new());
    let (mut err_a, mut err_b, mut bits, mut dev) = (0, 0, 0, 0.0f64);
    for start in (0..a.batch()).step_by(DPNC_EVAL_IMAGES) {
        let len = DPNC_EVAL_IMAGES.min(a.batch() - start);
        let r = dpnc_roundtrip(
            &chunk(a, start, len)?,
            &chunk(b, start, len)?,
            chan.delta_phi,
            chan.sigma2_up,
            chan.sigma2_down,
            params,
            rng,
        )?;
        err_a += r.bit_errors_at_a;
        err_b += r.bit_errors_at_b;
        bits += r.bits_per_node;
        dev = dev.max(power_deviation(&r.symbols.iter().collect::<Vec<_>>())?);
        parts_a.push(r.at_a);
        parts_b.push(r.at_b);
    }
    Ok(CellResult {
        at_a: concat(parts_a)?,
        at_b: concat(parts_b)?,
        bit_errors: Some((err_a, err_b, bits)),
        power_deviation: dev,
    })
}

/// SC-PNC exchange of two image sets at a fixed offset, in batches of
/// [`SCPNC_EVAL_BATCH`]. Returns `(at_a, at_b, max power deviation)`.
pub fn scpnc_roundtrip(
    net: &ScpncNet,
    a: &ImageBatch,
    b: &ImageBatch,
    chan: &ChannelRealization,
    rng: &mut RngState,
) -> Result<(ImageBatch, ImageBatch, f64)> {
    a.ensure_same_shape(b)?;
    let (mut parts_a, mut parts_b, mut dev) = (Vec::new(), Vec::new(), 0.0f64);
    for start in (0..a.batch()).step_by(SCPNC_EVAL_BATCH) {
        let len = SCPNC_EVAL_BATCH.min(a.batch() - start);
        let ta = net.image_tensor(&chunk(a, start, len)?)?;
        let tb = net.image_tensor(&chunk(b, start, len)?)?;
        let draw = ChannelDraw::sample(len, net.arch().m, vec![chan.delta_phi; len], chan.sigma2_up, chan.sigma2_down, rng)?;
        let out = net.exchange(&ta, &tb, &draw)?;
        dev = dev.max(power_deviation(&[&out.x_a, &out.x_b, &out.x_r])?);
        parts_a.push(net.tensor_to_images(&out.at_a)?);
        parts_b.push(net.tensor_to_images(&out.at_b)?);
    }
    Ok((concat(parts_a)?, concat(parts_b)?, dev))
}

/// Symbols each scheme spends per image (both slots carry this many).
pub fn symbols_per_image(scheme: Scheme, image_bits: usize, sc: Option<&ScpncNet>, d: Option<&DpncParams>) -> usize {
    match scheme {
        Scheme::ConvPnc => ConvPncConfig::default().symbols_for(image_bits),
        Scheme::DPnc => d.map_or(0, |p| image_bits.div_ceil(p.arch().bits_per_block()) * p.arch().block_symbols),
        Scheme::ScPnc => sc.map_or(0, |n| n.arch().symbols_per_image()),
    }
}

/// Cell progress notification: `(scheme, snr_db, offset_deg)`.
pub type SweepObserver<'a> = &'a mut dyn FnMut(Scheme, f64, f64);

/// Evaluates every (scheme, SNR, offset) cell in both directions.
pub fn run_sweep(
    spec: &SweepSpec,
    checkpoints: &CheckpointSet,
    test: &ImageBatch,
    observer: SweepObserver<'_>,
) -> Result<SweepOutcome> {
    spec.validate()?;
    let mut used = Vec::new();
    let mut sc_net = None;
    let mut d_net = None;
    for &scheme in &spec.schemes {
        if !scheme.is_neural() {
            continue;
        }
        let path = checkpoints.path(scheme).filter(|p| p.exists()).ok_or_else(|| Error::MissingCheckpoint {
            scheme: scheme.name().to_string(),
            path: checkpoints.path(scheme).cloned().unwrap_or_default(),
        })?;
        used.push((scheme, path.clone(), file_sha256(path)?));
        match scheme {
            Scheme::ScPnc => sc_net = Some(load_checkpoint(path)?.net),
            Scheme::DPnc => d_net = Some(load_dpnc(path)?.0),
            Scheme::ConvPnc => {}
        }
    }

    let (img_a, img_b) = test_pairs(test, spec.test_pairs, spec.seed)?;
    let image_bits = img_a.image_len() * 8;
    let mut records = Vec::with_capacity(spec.num_records());
    let mut max_dev = 0.0f64;
    for &scheme in &spec.schemes {
        let symbols = symbols_per_image(scheme, image_bits, sc_net.as_ref(), d_net.as_ref());
        for &offset in &spec.offsets_deg {
            for &snr in &spec.snrs_db {
                observer(scheme, snr, offset);
                let sigma2 = snr_to_noise_variance(snr, 1.0)?;
                let chan = ChannelRealization::equal_power(offset.to_radians(), sigma2, sigma2)?;
                let seed = spec.cell_seed(scheme, snr, offset);
                let mut rng = RngState::new(seed);
                let cell = match scheme {
                    Scheme::ConvPnc => run_conv(&img_a, &img_b, &chan, &mut rng)?,
                    Scheme::DPnc => run_dpnc(&img_a, &img_b, &chan, d_net.as_ref().unwrap(), &mut rng)?,
                    Scheme::ScPnc => {
                        let (at_a, at_b, dev) = scpnc_roundtrip(sc_net.as_ref().unwrap(), &img_a, &img_b, &chan, &mut rng)?;
                        CellResult {
                            at_a,
                            at_b,
                            bit_errors: None,
                            power_deviation: dev,
                        }
                    }
                };
                max_dev = max_dev.max(cell.power_deviation);
                for direction in [Direction::AToB, Direction::BToA] {
                    let (sent, received, errors) = match direction {
                        Direction::AToB => (&img_a, &cell.at_b, cell.bit_errors.map(|(_, e, n)| (e, n))),
                        Direction::BToA => (&img_b, &cell.at_a, cell.bit_errors.map(|(e, _, n)| (e, n))),
                    };
                    let (psnr_mean, psnr_std, n_inf) = summarize_psnr(&psnr(sent, received, 255.0)?);
                    records.push(MetricsRecord {
                        scheme,
                        direction,
                        snr_db: snr,
                        delta_phi_deg: offset,
                        psnr_mean,
                        psnr_std,
                        n_inf,
                        ber: errors.map(|(e, n)| e as f64 / n as f64),
                        n_images: sent.batch(),
                        symbols_per_image: symbols,
                        seed,
                    });
                }
            }
        }
    }
    Ok(SweepOutcome {
        records,
        max_power_deviation: max_dev,
        checkpoints: used,
    })
}
