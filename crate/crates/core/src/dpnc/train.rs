use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::path::Path;
use std::time::Instant;

use candle_core::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::channel::{snr_to_noise_variance, RngState};
use crate::checkpoint::{read_container, write_container};
use crate::dpnc::net::{bits_tensor, DpncArch, DpncParams};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::scpnc::ChannelDraw;

pub const CHECKPOINT_FORMAT: &str = "twrc.dpnc";
pub const CHECKPOINT_VERSION: u32 = 1;

const INIT_SALT: u64 = 0x6470_6e63;
const STEP_SALT: u64 = 0x7374_6570;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpncTrainConfig {
    pub arch: DpncArch,
    /// Blocks of random bits per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_snr_db: f64,
    /// Fixed training offset in degrees; uniform when absent.
    pub train_offset_deg: Option<f64>,
    pub steps: usize,
    /// Steps between progress reports and log flushes.
    pub report_every: usize,
    pub seed: u64,
}

impl Default for DpncTrainConfig {
    fn default() -> Self {
        Self {
            arch: DpncArch::default(),
            batch_size: 32,
            learning_rate: 0.001,
            train_snr_db: 7.0,
            train_offset_deg: Some(0.0),
            steps: 3000,
            report_every: 100,
            seed: 0,
        }
    }
}

impl DpncTrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("dpnc.{field}: {why}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive");
        }
        if !self.train_snr_db.is_finite() {
            return bad("train_snr_db", "must be finite");
        }
        if self.steps == 0 || self.report_every == 0 {
            return bad("steps", "steps and report_every must be positive");
        }
        if self.arch.block_symbols == 0 || self.arch.hidden == 0 || self.arch.kernel.is_multiple_of(2) {
            return bad("arch", "block_symbols and hidden must be positive, kernel odd");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        hex::encode(sha2::Sha256::digest(serde_json::to_string(self).expect("config serializes").as_bytes()))
    }
}

/// Training record stored in the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpncMeta {
    pub seed: u64,
    pub steps: u64,
    pub train_snr_db: f64,
    pub train_offset_deg: Option<f64>,
    /// Mean loss over each reporting window.
    pub losses: Vec<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DpncTrainEvent {
    Report { step: u64, loss: f64, bit_error_rate: f64 },
}

/// Binary cross-entropy with logits, averaged; `targets` holds 0/1.
fn bce_with_logits(logits: &Tensor, targets: &Tensor) -> Result<Tensor> {
    let pos = logits.relu()?;
    let soft = (logits.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok(((pos - (logits * targets)?)? + soft)?.mean_all()?)
}

/// Antipodal `(b, 2, n)` tensor back to 0/1 targets.
fn targets(antipodal: &Tensor) -> Result<Tensor> {
    Ok(((1.0 - antipodal)? * 0.5)?)
}

fn random_rows(rng: &mut RngState, rows: usize, bits: usize) -> Vec<Vec<u8>> {
    (0..rows).map(|_| (0..bits).map(|_| rng.random_range(0..2u8)).collect()).collect()
}

/// Trains on fresh random bit blocks every step. Loss is the cross-entropy
/// of both nodes' estimates of the other node's bits.
pub fn train_dpnc(
    cfg: &DpncTrainConfig,
    log_path: Option<&Path>,
    observer: &mut dyn FnMut(&DpncTrainEvent),
) -> Result<(DpncParams, DpncMeta)> {
    cfg.validate()?;
    let params = DpncParams::new(cfg.arch, cfg.seed ^ INIT_SALT)?;
    let mut adam = Adam::new(params.params(), cfg.learning_rate)?;
    let sigma2 = snr_to_noise_variance(cfg.train_snr_db, 1.0)?;
    let mut log = match log_path {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)?;
            }
            let file = OpenOptions::new().create(true).append(true).open(p)?;
            let fresh = file.metadata()?.len() == 0;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            if fresh {
                w.write_record(["step", "epoch", "loss", "wall_time_s"])?;
            }
            Some(w)
        }
        None => None,
    };
    let start = Instant::now();
    let bits = cfg.arch.bits_per_block();
    let mut meta = DpncMeta {
        seed: cfg.seed,
        steps: 0,
        train_snr_db: cfg.train_snr_db,
        train_offset_deg: cfg.train_offset_deg,
        losses: Vec::new(),
        config_hash: cfg.hash(),
    };
    let (mut window_loss, mut window_errors, mut window_n) = (0.0, 0.0, 0usize);
    for step in 0..cfg.steps as u64 {
        let mut rng = RngState::new(cfg.seed ^ STEP_SALT).fork(step);
        let a = random_rows(&mut rng, cfg.batch_size, bits);
        let b = random_rows(&mut rng, cfg.batch_size, bits);
        let ta = bits_tensor(&a.iter().map(|r| r.as_slice()).collect::<Vec<_>>())?;
        let tb = bits_tensor(&b.iter().map(|r| r.as_slice()).collect::<Vec<_>>())?;
        let phases = (0..cfg.batch_size)
            .map(|_| match cfg.train_offset_deg {
                Some(d) => d.to_radians().rem_euclid(std::f64::consts::TAU),
                None => crate::channel::sample_phase_offset(&mut rng),
            })
            .collect();
        let draw = ChannelDraw::sample(cfg.batch_size, 2 * cfg.arch.block_symbols, phases, sigma2, sigma2, &mut rng)?;
        let (at_a, at_b, _) = params.exchange_tensor(&ta, &tb, &draw)?;
        let loss = (bce_with_logits(&at_a, &targets(&tb)?)? + bce_with_logits(&at_b, &targets(&ta)?)?)?;
        let value = loss.to_scalar::<f32>()? as f64;
        if !value.is_finite() {
            return Err(Error::Diverged { step, loss: value });
        }
        let grads = loss.backward()?;
        adam.apply(params.params(), &grads)?;

        // a logit agrees with the antipodal symbol when their signs differ
        let wrong_a = (at_a.sign()? + &tb)?.abs()?.sum_all()?.to_scalar::<f32>()? as f64 / 2.0;
        let wrong_b = (at_b.sign()? + &ta)?.abs()?.sum_all()?.to_scalar::<f32>()? as f64 / 2.0;
        window_errors += (wrong_a + wrong_b) / (2 * cfg.batch_size * bits) as f64;
        window_loss += value;
        window_n += 1;
        meta.steps = step + 1;
        if let Some(w) = log.as_mut() {
            let t = start.elapsed().as_secs_f64();
            w.write_record([step.to_string(), "0".into(), format!("{value:.9}"), format!("{t:.3}")])?;
        }
        if meta.steps.is_multiple_of(cfg.report_every as u64) || meta.steps == cfg.steps as u64 {
            let mean = window_loss / window_n as f64;
            meta.losses.push(mean);
            observer(&DpncTrainEvent::Report {
                step,
                loss: mean,
                bit_error_rate: window_errors / window_n as f64,
            });
            if let Some(w) = log.as_mut() {
                w.flush()?;
            }
            (window_loss, window_errors, window_n) = (0.0, 0.0, 0);
        }
    }
    Ok((params, meta))
}

pub fn save_dpnc(params: &DpncParams, meta: &DpncMeta, path: &Path) -> Result<()> {
    let mut metadata = BTreeMap::new();
    metadata.insert("arch".to_string(), serde_json::to_string(params.arch())?);
    metadata.insert("meta".to_string(), serde_json::to_string(meta)?);
    write_container(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION, &params.params().snapshot()?, metadata)
}

pub fn load_dpnc(path: &Path) -> Result<(DpncParams, DpncMeta)> {
    let (tensors, metadata) = read_container(path, CHECKPOINT_FORMAT, CHECKPOINT_VERSION)?;
    let get = |k: &str| {
        metadata
            .get(k)
            .ok_or_else(|| Error::Checkpoint(format!("{}: missing metadata key {k}", path.display())))
    };
    let arch: DpncArch = serde_json::from_str(get("arch")?)?;
    let meta: DpncMeta = serde_json::from_str(get("meta")?)?;
    let params = DpncParams::new(arch, 0)?;
    params.params().load(&tensors)?;
    Ok((params, meta))
}
