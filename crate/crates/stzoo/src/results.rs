//! `results.csv` and the analysis report files.

use std::path::{Path, PathBuf};

use stzoo_core::analysis::{CostRow, DisentanglementReport, RunRecord, Setting, TpGainReport};
use stzoo_core::sampling::Strategy;
use stzoo_core::schedule::Level;

use crate::error::{io_err, Result, StzooError};

pub const RESULTS_HEADER: [&str; 13] =
    ["family", "backbone", "frames", "temporal_pool", "dataset", "sampling", "level", "clips", "crops", "top1", "top5", "flops", "params"];

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> StzooError + '_ {
    move |source| StzooError::Csv { path: path.into(), source }
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header: Vec<String> = rdr.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
    if header != RESULTS_HEADER {
        return Err(StzooError::Format { path: path.into(), msg: format!("expected header {}", RESULTS_HEADER.join(",")) });
    }
    rdr.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

/// Appends one row, writing the header first when the file is new or empty.
pub fn append_record(path: &Path, record: &RunRecord) -> Result<()> {
    let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(record).map_err(csv_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for r in records {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn strategy_name(s: Strategy) -> &'static str {
    match s {
        Strategy::Uniform => "uniform",
        Strategy::Dense => "dense",
    }
}

fn level_name(l: Level) -> &'static str {
    match l {
        Level::Clip => "clip",
        Level::Video => "video",
    }
}

fn setting_cols(s: &Setting) -> [String; 5] {
    [s.dataset.clone(), strategy_name(s.sampling).into(), level_name(s.level).into(), s.clips.to_string(), s.crops.to_string()]
}

fn f12(v: f64) -> String {
    format!("{v:.12}")
}

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub const DISENTANGLE_MODELS: &str = "disentangle_models.csv";
pub const DISENTANGLE_ARCHITECTURES: &str = "disentangle_architectures.csv";
pub const TP_GAIN: &str = "tp_gain.csv";
pub const TP_GAIN_MISSING: &str = "tp_gain_missing.csv";
pub const ACC_VS_FLOPS: &str = "acc_vs_flops.csv";

/// Writes the per-model and per-architecture tables; returns their paths.
pub fn write_disentanglement(dir: &Path, report: &DisentanglementReport) -> Result<Vec<PathBuf>> {
    let models = dir.join(DISENTANGLE_MODELS);
    write_table(
        &models,
        &["family", "temporal_pool", "backbone", "frames", "dataset", "sampling", "level", "clips", "crops", "s_a", "s_tsn", "phi", "psi"],
        report.rows.iter().map(|r| {
            let mut row = vec![r.family.to_string(), r.temporal_pool.to_string(), r.backbone.to_string(), r.frames.to_string()];
            row.extend(setting_cols(&r.setting));
            row.extend([f12(r.s_a), f12(r.s_tsn), f12(r.phi), f12(r.psi)]);
            row
        }),
    )?;
    let archs = dir.join(DISENTANGLE_ARCHITECTURES);
    write_table(
        &archs,
        &["family", "temporal_pool", "dataset", "sampling", "level", "clips", "crops", "phi_bar", "psi_bar", "z", "backbones", "frames"],
        report.architectures.iter().map(|a| {
            let mut row = vec![a.family.to_string(), a.temporal_pool.to_string()];
            row.extend(setting_cols(&a.setting));
            row.extend([
                f12(a.phi_bar),
                f12(a.psi_bar),
                a.z.to_string(),
                a.backbones.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(";"),
                a.frames.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(";"),
            ]);
            row
        }),
    )?;
    Ok(vec![models, archs])
}

pub fn write_tp_gain(dir: &Path, report: &TpGainReport) -> Result<Vec<PathBuf>> {
    let gains = dir.join(TP_GAIN);
    write_table(
        &gains,
        &["family", "backbone", "frames", "dataset", "sampling", "level", "clips", "crops", "s_tp", "s_no_tp", "gain"],
        report.gains.iter().map(|g| {
            let mut row = vec![g.family.to_string(), g.backbone.to_string(), g.frames.to_string()];
            row.extend(setting_cols(&g.setting));
            row.extend([f12(g.s_tp), f12(g.s_no_tp), format!("{:.10}", g.gain)]);
            row
        }),
    )?;
    let missing = dir.join(TP_GAIN_MISSING);
    write_table(&missing, &["unpaired_record"], report.missing.iter().map(|m| vec![m.clone()]))?;
    Ok(vec![gains, missing])
}

pub fn write_acc_vs_flops(dir: &Path, rows: &[CostRow]) -> Result<Vec<PathBuf>> {
    let path = dir.join(ACC_VS_FLOPS);
    write_table(
        &path,
        &["model", "frames", "dataset", "clip_flops", "clips", "crops", "total_flops", "top1"],
        rows.iter().map(|r| {
            vec![
                r.model.clone(),
                r.frames.to_string(),
                r.dataset.clone(),
                r.clip_flops.to_string(),
                r.clips.to_string(),
                r.crops.to_string(),
                r.total_flops.to_string(),
                f12(r.top1),
            ]
        }),
    )?;
    Ok(vec![path])
}
