//! CSV, plots and run manifest.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::checkpoint::file_sha256;
use crate::error::{Error, Result};
use crate::eval::sweep::{Direction, MetricsRecord, Scheme, SweepOutcome};

pub const CSV_HEADER: [&str; 11] = [
    "scheme",
    "direction",
    "snr_db",
    "delta_phi_deg",
    "psnr_mean",
    "psnr_std",
    "n_inf",
    "ber",
    "n_images",
    "symbols_per_image",
    "seed",
];

/// Infinite PSNR is drawn at this height.
const PLOT_CEILING_DB: f64 = 60.0;

fn fmt_f64(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    if s == "inf" {
        return Ok(f64::INFINITY);
    }
    s.parse().map_err(|_| Error::Config(format!("bad number {s:?} in metrics CSV")))
}

pub fn write_csv(records: &[MetricsRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.scheme.name().to_string(),
            r.direction.name().to_string(),
            fmt_f64(r.snr_db),
            fmt_f64(r.delta_phi_deg),
            fmt_f64(r.psnr_mean),
            fmt_f64(r.psnr_std),
            r.n_inf.to_string(),
            r.ber.map(fmt_f64).unwrap_or_default(),
            r.n_images.to_string(),
            r.symbols_per_image.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::Config(format!("{} does not have the metrics CSV header", path.display())));
    }
    let int = |s: &str| -> Result<u64> { s.parse().map_err(|_| Error::Config(format!("bad integer {s:?} in metrics CSV"))) };
    r.records()
        .map(|row| {
            let row = row?;
            Ok(MetricsRecord {
                scheme: row[0].parse()?,
                direction: row[1].parse()?,
                snr_db: parse_f64(&row[2])?,
                delta_phi_deg: parse_f64(&row[3])?,
                psnr_mean: parse_f64(&row[4])?,
                psnr_std: parse_f64(&row[5])?,
                n_inf: int(&row[6])? as usize,
                ber: if row[7].is_empty() { None } else { Some(parse_f64(&row[7])?) },
                n_images: int(&row[8])? as usize,
                symbols_per_image: int(&row[9])? as usize,
                seed: int(&row[10])?,
            })
        })
        .collect()
}

fn plot_color(scheme: Scheme) -> RGBColor {
    match scheme {
        Scheme::ConvPnc => RGBColor(31, 119, 180),
        Scheme::DPnc => RGBColor(44, 160, 44),
        Scheme::ScPnc => RGBColor(214, 39, 40),
    }
}

fn plot_error(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// PSNR against SNR at one offset, a line per scheme and direction.
pub fn plot_offset(records: &[MetricsRecord], offset_deg: f64, config_hash: &str, path: &Path) -> Result<()> {
    let cell: Vec<&MetricsRecord> = records.iter().filter(|r| r.delta_phi_deg == offset_deg).collect();
    let snrs: Vec<f64> = cell.iter().map(|r| r.snr_db).collect();
    let (x0, x1) = snrs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &s| (a.min(s), b.max(s)));
    let (x0, x1) = if x0 == x1 { (x0 - 1.0, x1 + 1.0) } else { (x0, x1) };
    let shown = |v: f64| v.min(PLOT_CEILING_DB);
    let y1 = cell.iter().map(|r| shown(r.psnr_mean)).fold(0.0f64, f64::max) + 5.0;

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    let title = format!("Δφ = {offset_deg}°  (config {})", &config_hash[..config_hash.len().min(12)]);
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, 0.0..y1)
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc("SNR (dB)")
        .y_desc("PSNR (dB)")
        .draw()
        .map_err(plot_error)?;
    let mut series: BTreeMap<(Scheme, Direction), Vec<(f64, f64)>> = BTreeMap::new();
    for r in &cell {
        series
            .entry((r.scheme, r.direction))
            .or_default()
            .push((r.snr_db, shown(r.psnr_mean)));
    }
    for ((scheme, direction), mut pts) in series {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = plot_color(scheme);
        let style = match direction {
            Direction::AToB => color.stroke_width(2),
            Direction::BToA => color.mix(0.5).stroke_width(2),
        };
        chart
            .draw_series(LineSeries::new(pts.clone(), style))
            .map_err(plot_error)?
            .label(format!("{} {}", scheme.label(), direction.name()))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], style));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(plot_error)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::LowerRight)
        .draw()
        .map_err(plot_error)?;
    root.present().map_err(plot_error)?;
    Ok(())
}

/// Everything needed to reproduce a report.
#[derive(Debug, Clone)]
pub struct RunInfo {
    pub config_hash: String,
    pub seed: u64,
    pub test_pairs: usize,
    pub reproducible: bool,
}

#[derive(Debug, Clone)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub plots: Vec<PathBuf>,
    pub manifest: PathBuf,
}

/// Writes `metrics.csv`, one `psnr_offset_<deg>.svg` per offset and
/// `manifest.txt` into `dir` (created if needed).
pub fn emit_report(outcome: &SweepOutcome, info: &RunInfo, dir: &Path) -> Result<ReportPaths> {
    let records = &outcome.records;
    if records.is_empty() {
        return Err(Error::Config("no records to report".into()));
    }
    std::fs::create_dir_all(dir)?;
    let csv = dir.join("metrics.csv");
    write_csv(records, &csv)?;

    let mut offsets: Vec<f64> = records.iter().map(|r| r.delta_phi_deg).collect();
    offsets.sort_by(f64::total_cmp);
    offsets.dedup();
    let mut plots = Vec::new();
    for off in offsets {
        let path = dir.join(format!("psnr_offset_{off}.svg"));
        plot_offset(records, off, &info.config_hash, &path)?;
        plots.push(path);
    }

    let manifest = dir.join("manifest.txt");
    let mut m = std::fs::File::create(&manifest)?;
    writeln!(m, "config_hash = {}", info.config_hash)?;
    writeln!(m, "seed = {}", info.seed)?;
    writeln!(m, "test_pairs = {}", info.test_pairs)?;
    writeln!(m, "reproducible = {}", info.reproducible)?;
    writeln!(m, "records = {}", records.len())?;
    writeln!(m, "max_power_deviation = {:e}", outcome.max_power_deviation)?;
    writeln!(m, "d_pnc_note = simplified baseline")?;
    let mut symbols = BTreeMap::new();
    for r in records {
        symbols.insert(r.scheme, r.symbols_per_image);
    }
    for (scheme, n) in symbols {
        writeln!(m, "symbols_per_image.{scheme} = {n}")?;
    }
    for (scheme, path, hash) in &outcome.checkpoints {
        writeln!(m, "checkpoint.{scheme}.path = {}", path.display())?;
        writeln!(m, "checkpoint.{scheme}.sha256 = {hash}")?;
    }
    writeln!(m, "metrics_csv.sha256 = {}", file_sha256(&csv)?)?;
    for p in &plots {
        writeln!(m, "plot = {}", p.file_name().unwrap().to_string_lossy())?;
    }
    Ok(ReportPaths { csv, plots, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(scheme: Scheme, direction: Direction, psnr: f64, ber: Option<f64>) -> MetricsRecord {
        MetricsRecord {
            scheme,
            direction,
            snr_db: -3.0,
            delta_phi_deg: 45.0,
            psnr_mean: psnr,
            psnr_std: 0.125,
            n_inf: 2,
            ber,
            n_images: 10,
            symbols_per_image: 392,
            seed: u64::MAX,
        }
    }

    #[test]
    fn csv_round_trips_infinity_and_missing_ber() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let records = vec![
            record(Scheme::ConvPnc, Direction::AToB, f64::INFINITY, Some(0.0)),
            record(Scheme::ScPnc, Direction::BToA, 23.456789012345678, None),
            record(Scheme::DPnc, Direction::AToB, 7.0, Some(1.0 / 3.0)),
        ];
        write_csv(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert!(text.contains("conv_pnc,A->B,-3,45,inf,"));
        assert_eq!(read_csv(&path).unwrap(), records);
    }

    #[test]
    fn report_writes_csv_plots_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut records = vec![
            record(Scheme::ConvPnc, Direction::AToB, 12.0, Some(0.1)),
            record(Scheme::ConvPnc, Direction::BToA, f64::INFINITY, Some(0.0)),
        ];
        let mut at_zero = records[0].clone();
        at_zero.delta_phi_deg = 0.0;
        records.push(at_zero);
        let outcome = SweepOutcome {
            records,
            max_power_deviation: 2e-8,
            checkpoints: vec![],
        };
        let info = RunInfo {
            config_hash: "abc123".into(),
            seed: 5,
            test_pairs: 10,
            reproducible: true,
        };
        let paths = emit_report(&outcome, &info, &dir.path().join("new")).unwrap();
        assert_eq!(paths.plots.len(), 2);
        let svg = std::fs::read_to_string(&paths.plots[1]).unwrap();
        assert!(svg.contains("abc123"));
        let manifest = std::fs::read_to_string(&paths.manifest).unwrap();
        assert!(manifest.contains("config_hash = abc123"));
        assert!(manifest.contains(&format!("metrics_csv.sha256 = {}", file_sha256(&paths.csv).unwrap())));
        assert!(manifest.contains("symbols_per_image.conv_pnc = 392"));

        let empty = SweepOutcome {
            records: vec![],
            ..outcome
        };
        assert!(emit_report(&empty, &info, dir.path()).is_err());
    }
}
