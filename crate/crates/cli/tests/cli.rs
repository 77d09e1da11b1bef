use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn twrc() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twrc"))
}

fn data_dir() -> Option<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist");
    if dir.join("t10k-images-idx3-ubyte").exists() {
        Some(dir.canonicalize().unwrap())
    } else {
        eprintln!("MNIST not found under data/mnist (scripts/fetch_mnist.sh); skipping");
        None
    }
}

fn write_config(dir: &Path, data: &Path, extra: &str) -> PathBuf {
    let path = dir.join("exp.toml");
    let text = format!(
        "seed = 3\n[paths]\ndata = {:?}\ncheckpoints = {:?}\noutput = {:?}\n{extra}",
        data,
        dir.join("ckpt"),
        dir.join("out")
    );
    std::fs::write(&path, text).unwrap();
    path
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().unwrap();
    eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn unknown_config_key_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\n[sweep]\nsnr = [1.0]\n").unwrap();
    let out = run(twrc().args(["sweep", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("snr"));
}

#[test]
fn invalid_value_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nbatch_size = 0\n").unwrap();
    let out = run(twrc().args(["train", "--config"]).arg(&cfg));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.batch_size"));
}

#[test]
fn unknown_scheme_exits_with_code_2() {
    let out = run(twrc().args(["sweep", "--schemes", "qam_pnc"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_checkpoint_exits_with_code_4() {
    let Some(data) = data_dir() else { return };
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &data, "");
    let out = run(twrc()
        .args(["sweep", "--schemes", "sc_pnc", "--snrs", "0", "--offsets", "0", "--test-pairs", "2", "--config"])
        .arg(&cfg));
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("twrc train --scheme sc_pnc"));
}

#[test]
fn conv_pnc_sweep_writes_report() {
    let Some(data) = data_dir() else { return };
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &data, "");
    let out = run(twrc()
        .args(["sweep", "--schemes", "conv_pnc", "--snrs", "-3,6", "--offsets", "0,90", "--test-pairs", "3"])
        .arg("--config")
        .arg(&cfg));
    assert!(out.status.success());
    let report = dir.path().join("out");
    let csv = std::fs::read_to_string(report.join("metrics.csv")).unwrap();
    // header plus 2 snrs x 2 offsets x 2 directions
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(report.join("psnr_offset_0.svg").exists());
    assert!(report.join("psnr_offset_90.svg").exists());
    let manifest = std::fs::read_to_string(report.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config_hash"));
}

#[test]
fn demo_writes_images_and_psnr() {
    let Some(data) = data_dir() else { return };
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &data, "");
    let out_dir = dir.path().join("fresh/demo");
    let out = run(twrc()
        .args(["demo", "--schemes", "conv_pnc", "--noiseless", "--offset", "0", "--index", "7", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir));
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("conv_pnc  A->B inf dB"), "{stdout}");
    let pgm = std::fs::read(out_dir.join("conv_pnc_at_b.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n28 28\n255\n"));
    assert_eq!(pgm.len(), b"P5\n28 28\n255\n".len() + 784);
    // a noiseless, aligned exchange delivers A's image exactly
    assert_eq!(pgm, std::fs::read(out_dir.join("original_a.pgm")).unwrap());
    let txt = std::fs::read_to_string(out_dir.join("psnr.txt")).unwrap();
    assert!(txt.contains("config_hash = "));

    let bad = run(twrc().args(["demo", "--index", "10000", "--config"]).arg(&cfg));
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn one_epoch_train_then_sweep() {
    let Some(data) = data_dir() else { return };
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &data,
        "[train]\nepochs = 1\nbatch_size = 16\ntrain_images = 64\nvalidation_images = 32\n",
    );
    let out = run(twrc().args(["train", "--scheme", "sc_pnc", "--config"]).arg(&cfg));
    assert!(out.status.success());
    let ckpt = dir.path().join("ckpt");
    assert!(ckpt.join("sc_pnc.safetensors").exists());
    assert!(ckpt.join("sc_pnc.latest.safetensors").exists());
    let log = std::fs::read_to_string(ckpt.join("sc_pnc.log.csv")).unwrap();
    // header plus 64 / 16 steps
    assert_eq!(log.lines().count(), 1 + 4);

    let out = run(twrc()
        .args(["sweep", "--schemes", "sc_pnc", "--snrs", "6", "--offsets", "45", "--test-pairs", "2", "--config"])
        .arg(&cfg));
    assert!(out.status.success());
    let csv = std::fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
