//! The SC-PNC optimization loop.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::DType;
use serde::{Deserialize, Serialize};
use sha2::Digest;

use crate::channel::RngState;
use crate::error::{Error, Result};
use crate::image::ImageBatch;
use crate::nn::Adam;
use crate::scpnc::{load_checkpoint, save_checkpoint, OptimizerState, ScpncArch, ScpncNet, TrainingMeta};
use crate::train::batches::{make_batches, OffsetSampling};
use crate::train::loss::{scalar, scpnc_loss, ChannelNoise};

const DATA_SALT: u64 = 0x6461_7461;
const NOISE_SALT: u64 = 0x006e_6f69_7365;
const VALIDATION_SALT: u64 = 0x0076_616c_6964;
const INIT_SALT: u64 = 0x696e_6974;

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Uplink and downlink SNR during training.
    pub train_snr_db: f64,
    /// Train without channel noise (overrides `train_snr_db`).
    pub noiseless: bool,
    /// Fixed training offset in degrees; uniform over the circle when absent.
    pub train_offset_deg: Option<f64>,
    pub epochs: usize,
    /// Epochs without held-out improvement before stopping.
    pub patience: usize,
    /// Optional cap on optimizer steps per epoch.
    pub steps_per_epoch: Option<usize>,
    /// Training images used (all when absent).
    pub train_images: Option<usize>,
    /// Images at the end of the training split held out for early stopping.
    pub validation_images: usize,
    pub m: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 0.001,
            train_snr_db: 7.0,
            noiseless: false,
            train_offset_deg: None,
            epochs: 50,
            patience: 5,
            steps_per_epoch: None,
            train_images: None,
            validation_images: 1000,
            m: 392,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(Error::Config(format!("train.{field}: {why}")));
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", format!("must be positive, got {}", self.learning_rate));
        }
        if !self.train_snr_db.is_finite() {
            return bad("train_snr_db", "must be finite".into());
        }
        if self.epochs == 0 {
            return bad("epochs", "must be positive".into());
        }
        if self.steps_per_epoch == Some(0) {
            return bad("steps_per_epoch", "must be positive".into());
        }
        if self.m == 0 || !self.m.is_multiple_of(2) {
            return bad("m", format!("must be a positive even number, got {}", self.m));
        }
        if let Some(d) = self.train_offset_deg {
            if !d.is_finite() {
                return bad("train_offset_deg", "must be finite".into());
            }
        }
        if self.validation_images < 2 * self.batch_size {
            return bad(
                "validation_images",
                format!("needs at least two batches ({}), got {}", 2 * self.batch_size, self.validation_images),
            );
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(sha2::Sha256::digest(json.as_bytes()))
    }

    pub fn noise(&self) -> Result<ChannelNoise> {
        if self.noiseless {
            Ok(ChannelNoise::noiseless())
        } else {
            ChannelNoise::from_snr_db(self.train_snr_db)
        }
    }

    pub fn offsets(&self) -> OffsetSampling {
        match self.train_offset_deg {
            Some(d) => OffsetSampling::Fixed(d.to_radians()),
            None => OffsetSampling::Uniform,
        }
    }

    /// Splits a full training split into (train, held-out) sets.
    pub fn split_dataset(&self, all: &ImageBatch) -> Result<(ImageBatch, ImageBatch)> {
        let n = all.batch();
        if n <= self.validation_images {
            return Err(Error::Config(format!(
                "train.validation_images ({}) leaves no training data out of {n}",
                self.validation_images
            )));
        }
        let cut = n - self.validation_images;
        let train_n = self.train_images.map_or(cut, |t| t.min(cut));
        let train = all.select(&(0..train_n).collect::<Vec<_>>())?;
        let val = all.select(&(cut..n).collect::<Vec<_>>())?;
        Ok((train, val))
    }
}

/// Progress notifications.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainEvent {
    Step { step: u64, epoch: usize, loss: f64 },
    Epoch { epoch: usize, train_loss: f64, val_loss: f64, improved: bool },
    EarlyStop { epoch: usize },
}

/// Where a run writes. `latest` carries optimizer state for resuming;
/// `best` holds the parameters with the lowest held-out loss.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub best: PathBuf,
    pub latest: PathBuf,
    pub log: Option<PathBuf>,
}

impl RunPaths {
    /// `<dir>/<stem>.safetensors`, `<dir>/<stem>.latest.safetensors` and
    /// `<dir>/<stem>.log.csv`.
    pub fn in_dir(dir: &Path, stem: &str) -> Self {
        Self {
            best: dir.join(format!("{stem}.safetensors")),
            latest: dir.join(format!("{stem}.latest.safetensors")),
            log: Some(dir.join(format!("{stem}.log.csv"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub meta: TrainingMeta,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

struct StepLog {
    writer: csv::Writer<std::fs::File>,
    start: Instant,
}

impl StepLog {
    fn open(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer.write_record(["step", "epoch", "loss", "wall_time_s"])?;
        }
        Ok(Self {
            writer,
            start: Instant::now(),
        })
    }

    fn write(&mut self, step: u64, epoch: usize, loss: f64) -> Result<()> {
        let t = self.start.elapsed().as_secs_f64();
        self.writer
            .write_record([step.to_string(), epoch.to_string(), format!("{loss:.9}"), format!("{t:.3}")])?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Mean loss over the held-out set with a fixed channel realization.
pub fn validation_loss(net: &ScpncNet, cfg: &TrainConfig, val: &ImageBatch) -> Result<f64> {
    let noise = cfg.noise()?;
    let mut rng = RngState::new(cfg.seed ^ VALIDATION_SALT);
    let batches = make_batches(val, cfg.batch_size, OffsetSampling::Uniform, &mut rng)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for t in batches {
        total += scalar(&scpnc_loss(&t, net, &noise, &mut rng)?)?;
        count += 1;
    }
    Ok(total / count as f64)
}

/// Trains from scratch, or continues from `paths.latest` when `resume` is
/// set and that file exists. Checkpoints are written after every epoch.
pub fn train(
    cfg: &TrainConfig,
    train_set: &ImageBatch,
    val_set: &ImageBatch,
    paths: &RunPaths,
    resume: bool,
    config_hash: &str,
    observer: &mut dyn FnMut(&TrainEvent),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let noise = cfg.noise()?;
    let arch = ScpncArch {
        m: cfg.m,
        height: train_set.height(),
        width: train_set.width(),
        channels: train_set.channels(),
    };

    let (net, mut adam, mut meta) = if resume && paths.latest.exists() {
        let ckpt = load_checkpoint(&paths.latest)?;
        if *ckpt.net.arch() != arch {
            return Err(Error::Checkpoint(format!(
                "{}: architecture {:?} does not match config {:?}",
                paths.latest.display(),
                ckpt.net.arch(),
                arch
            )));
        }
        let opt = ckpt
            .optimizer
            .ok_or_else(|| Error::Checkpoint(format!("{} has no optimizer state", paths.latest.display())))?;
        let mut adam = Adam::new(ckpt.net.params(), cfg.learning_rate)?;
        adam.load_state(&opt.tensors, opt.step)?;
        let mut meta = ckpt.meta;
        meta.config_hash = config_hash.to_string();
        (ckpt.net, adam, meta)
    } else {
        let net = ScpncNet::new(arch, DType::F32, cfg.seed ^ INIT_SALT)?;
        let adam = Adam::new(net.params(), cfg.learning_rate)?;
        let meta = TrainingMeta {
            seed: cfg.seed,
            epochs_completed: 0,
            steps: 0,
            train_snr_db: if cfg.noiseless { f64::INFINITY } else { cfg.train_snr_db },
            batch_size: cfg.batch_size,
            learning_rate: cfg.learning_rate,
            epoch_losses: Vec::new(),
            val_losses: Vec::new(),
            config_hash: config_hash.to_string(),
        };
        (net, adam, meta)
    };

    let mut log = paths.log.as_deref().map(StepLog::open).transpose()?;
    let mut best = meta.val_losses.iter().copied().fold(f64::INFINITY, f64::min);
    let mut stale = epochs_since_best(&meta.val_losses);
    let mut stopped_early = false;

    for epoch in meta.epochs_completed..cfg.epochs {
        if stale >= cfg.patience && !meta.val_losses.is_empty() {
            stopped_early = true;
            observer(&TrainEvent::EarlyStop { epoch });
            break;
        }
        let mut data_rng = RngState::new(cfg.seed ^ DATA_SALT).fork(epoch as u64);
        let batches = make_batches(train_set, cfg.batch_size, cfg.offsets(), &mut data_rng)?;
        let limit = cfg.steps_per_epoch.unwrap_or(usize::MAX);
        let mut epoch_total = 0.0;
        let mut epoch_steps = 0usize;
        for triplet in batches.take(limit) {
            let mut noise_rng = RngState::new(cfg.seed ^ NOISE_SALT).fork(meta.steps);
            let loss = scpnc_loss(&triplet, &net, &noise, &mut noise_rng)?;
            let value = scalar(&loss)?;
            if !value.is_finite() {
                return Err(Error::Diverged {
                    step: meta.steps,
                    loss: value,
                });
            }
            let grads = loss.backward()?;
            adam.apply(net.params(), &grads)?;
            if let Some(log) = log.as_mut() {
                log.write(meta.steps, epoch, value)?;
            }
            observer(&TrainEvent::Step {
                step: meta.steps,
                epoch,
                loss: value,
            });
            meta.steps += 1;
            epoch_total += value;
            epoch_steps += 1;
        }

        let val_loss = validation_loss(&net, cfg, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::Diverged {
                step: meta.steps,
                loss: val_loss,
            });
        }
        meta.epochs_completed = epoch + 1;
        meta.epoch_losses.push(epoch_total / epoch_steps.max(1) as f64);
        meta.val_losses.push(val_loss);
        let improved = val_loss < best;
        if improved {
            best = val_loss;
            stale = 0;
            save_checkpoint(&net, &meta, None, &paths.best)?;
        } else {
            stale += 1;
        }
        save_checkpoint(&net, &meta, Some(&OptimizerState::capture(&adam)?), &paths.latest)?;
        observer(&TrainEvent::Epoch {
            epoch,
            train_loss: *meta.epoch_losses.last().unwrap(),
            val_loss,
            improved,
        });
    }

    Ok(TrainSummary {
        meta,
        best_val_loss: best,
        stopped_early,
    })
}

fn epochs_since_best(val: &[f64]) -> usize {
    let Some((best_at, _)) = val
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
    else {
        return 0;
    };
    val.len() - 1 - best_at
}
