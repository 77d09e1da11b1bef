use std::path::Path;

use twrc_core::channel::RngState;
use twrc_core::scpnc::load_checkpoint;
use twrc_core::train::{train, RunPaths, TrainConfig, TrainEvent};
use twrc_core::ImageBatch;

/// Bright rectangles on a dark background, a crude stand-in for digits.
fn rectangles(n: usize, seed: u64) -> ImageBatch {
    let mut rng = RngState::new(seed);
    let mut pixels = vec![0.0f32; n * 784];
    for img in pixels.chunks_mut(784) {
        let pick = |rng: &mut RngState, lo: usize, hi: usize| lo + (rng.uniform() * (hi - lo) as f64) as usize;
        let (r0, c0) = (pick(&mut rng, 2, 14), pick(&mut rng, 2, 14));
        let (r1, c1) = (pick(&mut rng, r0 + 4, 26), pick(&mut rng, c0 + 4, 26));
        for r in r0..r1 {
            for c in c0..c1 {
                img[r * 28 + c] = 0.9;
            }
        }
    }
    ImageBatch::new(n, 28, 28, 1, pixels).unwrap()
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs,
        validation_images: 32,
        seed: 5,
        ..Default::default()
    }
}

fn run(cfg: &TrainConfig, dir: &Path, resume: bool, losses: &mut Vec<f64>) -> twrc_core::train::TrainSummary {
    let train_set = rectangles(48, 1);
    let val_set = rectangles(32, 2);
    let paths = RunPaths::in_dir(dir, "sc_pnc");
    train(cfg, &train_set, &val_set, &paths, resume, &cfg.hash(), &mut |e| {
        if let TrainEvent::Step { loss, .. } = e {
            losses.push(*loss);
        }
    })
    .unwrap()
}

fn params(path: &Path) -> Vec<(String, Vec<u32>)> {
    let ckpt = load_checkpoint(path).unwrap();
    ckpt.net
        .params()
        .snapshot()
        .unwrap()
        .into_iter()
        .map(|(k, t)| {
            let bits = t.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().map(|v| v.to_bits()).collect();
            (k, bits)
        })
        .collect()
}

#[test]
fn short_run_reduces_loss_and_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut losses = Vec::new();
    let summary = run(&small_config(6), dir.path(), false, &mut losses);
    // 48 images in batches of 16
    assert_eq!(losses.len(), 6 * 3);
    let head: f64 = losses[..3].iter().sum::<f64>() / 3.0;
    let tail: f64 = losses[losses.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(tail < head, "loss went from {head} to {tail}");
    assert_eq!(summary.meta.epochs_completed, 6);
    assert_eq!(summary.meta.val_losses.len(), 6);
    assert_eq!(summary.best_val_loss, summary.meta.val_losses.iter().copied().fold(f64::INFINITY, f64::min));

    let log = std::fs::read_to_string(dir.path().join("sc_pnc.log.csv")).unwrap();
    assert_eq!(log.lines().next().unwrap(), "step,epoch,loss,wall_time_s");
    assert_eq!(log.lines().count(), 1 + 18);
    let best = load_checkpoint(&dir.path().join("sc_pnc.safetensors")).unwrap();
    assert_eq!(best.meta.seed, 5);
    assert!(best.optimizer.is_none());
    let latest = load_checkpoint(&dir.path().join("sc_pnc.latest.safetensors")).unwrap();
    assert_eq!(latest.optimizer.unwrap().step, 18);
}

#[test]
fn resuming_matches_an_uninterrupted_run_bit_for_bit() {
    let straight = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let mut a = Vec::new();
    run(&small_config(2), straight.path(), false, &mut a);
    let mut b = Vec::new();
    run(&small_config(1), split.path(), false, &mut b);
    let resumed = run(&small_config(2), split.path(), true, &mut b);
    assert_eq!(resumed.meta.steps, 6);
    assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(
        params(&straight.path().join("sc_pnc.latest.safetensors")),
        params(&split.path().join("sc_pnc.latest.safetensors"))
    );
}

#[test]
fn step_cap_and_patience() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        steps_per_epoch: Some(1),
        patience: 1,
        ..small_config(12)
    };
    let mut losses = Vec::new();
    let summary = run(&cfg, dir.path(), false, &mut losses);
    assert_eq!(losses.len() as u64, summary.meta.steps);
    assert_eq!(summary.meta.steps as usize, summary.meta.epochs_completed);
    // with patience 1 a run stops at the first epoch that fails to improve
    if summary.stopped_early {
        let v = &summary.meta.val_losses;
        assert!(v[v.len() - 1] >= v[..v.len() - 1].iter().copied().fold(f64::INFINITY, f64::min));
    }
}

#[test]
fn bad_configs_are_rejected_before_training() {
    let dir = tempfile::tempdir().unwrap();
    let train_set = rectangles(48, 1);
    let paths = RunPaths::in_dir(dir.path(), "x");
    for (cfg, field) in [
        (TrainConfig { learning_rate: 0.0, ..small_config(1) }, "train.learning_rate"),
        (TrainConfig { validation_images: 8, ..small_config(1) }, "train.validation_images"),
        (TrainConfig { m: 7, ..small_config(1) }, "train.m"),
    ] {
        let err = train(&cfg, &train_set, &train_set, &paths, false, "", &mut |_| {}).unwrap_err();
        assert!(err.to_string().contains(field), "{err}");
    }
    assert!(!dir.path().join("x.safetensors").exists());
}
