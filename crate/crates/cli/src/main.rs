use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twrc_core::channel::{ChannelRealization, RngState};
use twrc_core::classic::{conv_pnc_roundtrip, ConvPncConfig};
use twrc_core::dpnc::{dpnc_roundtrip, load_dpnc, save_dpnc, train_dpnc, DpncTrainEvent};
use twrc_core::eval::{emit_report, psnr, run_sweep, scpnc_roundtrip, RunInfo, Scheme};
use twrc_core::image::ImageBatch;
use twrc_core::scpnc::load_checkpoint;
use twrc_core::train::{load_dataset, train, RunPaths, Split, TrainEvent};
use twrc_core::{Error, ExperimentConfig};

#[derive(Parser)]
#[command(name = "twrc", version, about = "Two-way relay channel PNC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment config; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (checkpoints for `train`, reports otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Single-threaded, fully seeded execution.
    #[arg(long)]
    reproducible: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learned scheme and write its checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// sc_pnc or d_pnc.
        #[arg(long, default_value = "sc_pnc")]
        scheme: String,
        /// Continue from the latest checkpoint if one exists.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate the SNR x offset grid and write CSV, plots and a manifest.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated offsets in degrees.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        offsets: Option<Vec<f64>>,
        /// Comma-separated SNRs in dB.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        snrs: Option<Vec<f64>>,
        /// Comma-separated scheme names.
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        /// Image pairs per cell.
        #[arg(long)]
        test_pairs: Option<usize>,
    },
    /// Dump original and reconstructed images for one test pair.
    Demo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        index: Option<usize>,
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        offset: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        schemes: Option<Vec<String>>,
        /// Conv-PNC without channel noise.
        #[arg(long)]
        noiseless: bool,
    },
}

/// Failure classes with their exit codes.
enum Failure {
    Config(String),
    Diverged(String),
    MissingCheckpoint(String),
    Other(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Config(e.to_string()),
            Error::Diverged { .. } => Failure::Diverged(e.to_string()),
            Error::MissingCheckpoint { .. } => Failure::MissingCheckpoint(e.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn load_config(common: &Common) -> Outcome<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default().resolved(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if common.reproducible {
        cfg.reproducible = true;
    }
    cfg.validate()?;
    if cfg.reproducible {
        // the numerical backend reads this before spawning worker threads
        std::env::set_var("RAYON_NUM_THREADS", "1");
    }
    Ok(cfg)
}

fn parse_schemes(names: &[String]) -> Outcome<Vec<Scheme>> {
    names.iter().map(|n| n.parse().map_err(Failure::from)).collect()
}

fn cmd_train(common: &Common, scheme: &str, resume: bool) -> Outcome<PathBuf> {
    let cfg = load_config(common)?;
    let scheme: Scheme = scheme.parse()?;
    let dir = common.out.clone().unwrap_or_else(|| cfg.paths.checkpoints.clone());
    match scheme {
        Scheme::ScPnc => {
            let all = load_dataset("mnist", Split::Train, &cfg.paths.data)?;
            let (train_set, val_set) = cfg.train.split_dataset(&all)?;
            let paths = RunPaths::in_dir(&dir, scheme.name());
            println!(
                "training sc_pnc on {} images ({} held out), config {}",
                train_set.batch(),
                val_set.batch(),
                cfg.hash()
            );
            let summary = train(&cfg.train, &train_set, &val_set, &paths, resume, &cfg.train.hash(), &mut |e| {
                match e {
                    TrainEvent::Step { step, loss, .. } if step % 50 == 0 => println!("step {step:>6}  loss {loss:.5}"),
                    TrainEvent::Step { .. } => {}
                    TrainEvent::Epoch {
                        epoch,
                        train_loss,
                        val_loss,
                        improved,
                    } => println!(
                        "epoch {epoch:>3}  train {train_loss:.5}  held-out {val_loss:.5}{}",
                        if *improved { "  (best)" } else { "" }
                    ),
                    TrainEvent::EarlyStop { epoch } => println!("early stop before epoch {epoch}"),
                }
            })?;
            println!("best held-out loss {:.5} after {} epochs", summary.best_val_loss, summary.meta.epochs_completed);
            Ok(paths.best)
        }
        Scheme::DPnc => {
            let path = dir.join("d_pnc.safetensors");
            let log = dir.join("d_pnc.log.csv");
            println!("training d_pnc (simplified baseline), config {}", cfg.hash());
            let (params, meta) = train_dpnc(&cfg.dpnc, Some(&log), &mut |e| {
                let DpncTrainEvent::Report {
                    step,
                    loss,
                    bit_error_rate,
                } = e;
                println!("step {step:>6}  loss {loss:.5}  bit errors {bit_error_rate:.4}");
            })?;
            save_dpnc(&params, &meta, &path)?;
            Ok(path)
        }
        Scheme::ConvPnc => Err(Error::Config("--scheme: conv_pnc has no trainable parameters".into()).into()),
    }
}

fn cmd_sweep(
    common: &Common,
    offsets: Option<Vec<f64>>,
    snrs: Option<Vec<f64>>,
    schemes: Option<Vec<String>>,
    test_pairs: Option<usize>,
) -> Outcome<PathBuf> {
    let mut cfg = load_config(common)?;
    if let Some(o) = offsets {
        cfg.sweep.offsets_deg = o;
    }
    if let Some(s) = snrs {
        cfg.sweep.snrs_db = s;
    }
    if let Some(s) = schemes {
        cfg.schemes = parse_schemes(&s)?;
    }
    if let Some(n) = test_pairs {
        cfg.sweep.test_pairs = n;
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.paths.output.clone());
    let test = load_dataset("mnist", Split::Test, &cfg.paths.data)?;
    let outcome = run_sweep(&cfg.sweep, &cfg.checkpoints(), &test, &mut |scheme, snr, off| {
        println!("{scheme:>8}  snr {snr:>5} dB  offset {off:>5} deg");
    })?;
    let info = RunInfo {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        test_pairs: cfg.sweep.test_pairs,
        reproducible: cfg.reproducible,
    };
    let paths = emit_report(&outcome, &info, &out)?;
    println!("wrote {} records to {}", outcome.records.len(), paths.csv.display());
    for p in &paths.plots {
        println!("wrote {}", p.display());
    }
    println!("wrote {}", paths.manifest.display());
    Ok(paths.csv)
}

/// Binary PGM, the simplest portable grayscale image format.
fn write_pgm(path: &Path, images: &ImageBatch, n: usize) -> std::io::Result<()> {
    let (_, h, w, _) = images.shape();
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(images.image_u8(n));
    std::fs::write(path, bytes)
}

fn cmd_demo(
    common: &Common,
    index: Option<usize>,
    snr: Option<f64>,
    offset: Option<f64>,
    schemes: Option<Vec<String>>,
    noiseless: bool,
) -> Outcome<PathBuf> {
    let cfg = load_config(common)?;
    let index = index.unwrap_or(cfg.demo.image_index);
    let snr = snr.unwrap_or(cfg.demo.snr_db);
    let offset = offset.unwrap_or(cfg.demo.offset_deg);
    let noiseless = noiseless || cfg.demo.noiseless;
    let schemes = match schemes {
        Some(s) => parse_schemes(&s)?,
        None => cfg.schemes.clone(),
    };
    let test = load_dataset("mnist", Split::Test, &cfg.paths.data)?;
    let n = test.batch();
    if index >= n {
        return Err(Error::Config(format!("demo.image_index: {index} is out of range (test split has {n} images)")).into());
    }
    // node B sends the image half the test split away
    let img_a = test.select(&[index])?;
    let img_b = test.select(&[(index + n / 2) % n])?;
    let out = common.out.clone().unwrap_or_else(|| cfg.paths.output.join("demo"));
    std::fs::create_dir_all(&out)?;
    write_pgm(&out.join("original_a.pgm"), &img_a, 0)?;
    write_pgm(&out.join("original_b.pgm"), &img_b, 0)?;

    let chan = if noiseless {
        ChannelRealization::noiseless(offset.to_radians())
    } else {
        ChannelRealization::from_snr_db(offset.to_radians(), snr, snr)?
    };
    let mut lines = vec![format!(
        "config_hash = {}\nimage_index = {index}\nsnr_db = {}\noffset_deg = {offset}",
        cfg.hash(),
        if noiseless { "inf".to_string() } else { snr.to_string() }
    )];
    for scheme in schemes {
        let mut rng = RngState::new(cfg.seed);
        let (at_a, at_b) = match scheme {
            Scheme::ConvPnc => {
                let (a, b, _) = conv_pnc_roundtrip(&img_a, &img_b, &chan, &chan, &ConvPncConfig::default(), &mut rng)?;
                (a, b)
            }
            Scheme::ScPnc | Scheme::DPnc => {
                let path = cfg.checkpoint_path(scheme);
                if !path.exists() {
                    return Err(Error::MissingCheckpoint {
                        scheme: scheme.name().into(),
                        path,
                    }
                    .into());
                }
                if scheme == Scheme::ScPnc {
                    let net = load_checkpoint(&path)?.net;
                    let (a, b, _) = scpnc_roundtrip(&net, &img_a, &img_b, &chan, &mut rng)?;
                    (a, b)
                } else {
                    let (params, _) = load_dpnc(&path)?;
                    let r = dpnc_roundtrip(&img_a, &img_b, chan.delta_phi, chan.sigma2_up, chan.sigma2_down, &params, &mut rng)?;
                    (r.at_a, r.at_b)
                }
            }
        };
        write_pgm(&out.join(format!("{}_at_b.pgm", scheme.name())), &at_b, 0)?;
        write_pgm(&out.join(format!("{}_at_a.pgm", scheme.name())), &at_a, 0)?;
        let p_ab = psnr(&img_a, &at_b, 255.0)?[0];
        let p_ba = psnr(&img_b, &at_a, 255.0)?[0];
        let line = format!("{}  A->B {p_ab:.2} dB  B->A {p_ba:.2} dB", scheme.name());
        println!("{line}");
        lines.push(format!("psnr.{} = {p_ab} {p_ba}", scheme.name()));
    }
    let report = out.join("psnr.txt");
    std::fs::write(&report, lines.join("\n") + "\n")?;
    Ok(out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train { common, scheme, resume } => cmd_train(common, scheme, *resume),
        Command::Sweep {
            common,
            offsets,
            snrs,
            schemes,
            test_pairs,
        } => cmd_sweep(common, offsets.clone(), snrs.clone(), schemes.clone(), *test_pairs),
        Command::Demo {
            common,
            index,
            snr,
            offset,
            schemes,
            noiseless,
        } => cmd_demo(common, *index, *snr, *offset, schemes.clone(), *noiseless),
    };
    match result {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(Failure::Config(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(3)
        }
        Err(Failure::MissingCheckpoint(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(4)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
