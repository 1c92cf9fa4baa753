//! Spatial/temporal disentanglement, temporal-pooling gains and
//! accuracy-vs-cost tables over experiment results.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::archspec::{Backbone, Family};
use crate::error::{Error, Result};
use crate::sampling::Strategy;
use crate::schedule::Level;

/// One experiment result. Accuracies are percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub family: Family,
    pub backbone: Backbone,
    pub frames: usize,
    pub temporal_pool: bool,
    pub dataset: String,
    pub sampling: Strategy,
    pub level: Level,
    pub clips: usize,
    pub crops: usize,
    pub top1: f64,
    pub top5: f64,
    pub flops: u64,
    pub params: u64,
}

/// Evaluation setting shared by a baseline and the models compared to it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Setting {
    pub dataset: String,
    pub sampling: Strategy,
    pub level: Level,
    pub clips: usize,
    pub crops: usize,
}

impl RunRecord {
    pub fn setting(&self) -> Setting {
        Setting {
            dataset: self.dataset.clone(),
            sampling: self.sampling,
            level: self.level,
            clips: self.clips,
            crops: self.crops,
        }
    }

    /// `module-backbone[-tp]`.
    pub fn model_name(&self) -> String {
        format!("{}-{}{}", self.family, self.backbone, if self.temporal_pool { "-tp" } else { "" })
    }

    fn key(&self) -> RecordKey {
        (self.family, self.temporal_pool, self.backbone, self.frames, self.setting())
    }

    fn is_baseline(&self) -> bool {
        self.family == Family::Tsn && !self.temporal_pool
    }

    fn describe(&self) -> String {
        format!(
            "{} k={} dataset={} sampling={:?} level={:?} clips={} crops={}",
            self.model_name(),
            self.frames,
            self.dataset,
            self.sampling,
            self.level,
            self.clips,
            self.crops
        )
    }
}

/// Spatial contribution `Φ = S_TSN / max(S_a, S_TSN)` and temporal
/// improvement `Ψ = (S_a − S_TSN) / (100 − S_TSN)`.
pub fn phi_psi(s_a: f64, s_tsn: f64) -> Result<(f64, f64)> {
    for s in [s_a, s_tsn] {
        if !(0.0..=100.0).contains(&s) {
            return Err(Error::AccuracyRange(s));
        }
    }
    if s_tsn >= 100.0 {
        return Err(Error::SaturatedBaseline(format!("S_TSN = {s_tsn}")));
    }
    let max = s_a.max(s_tsn);
    let phi = if max == 0.0 { 1.0 } else { s_tsn / max };
    Ok((phi, (s_a - s_tsn) / (100.0 - s_tsn)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRow {
    pub family: Family,
    pub temporal_pool: bool,
    pub backbone: Backbone,
    pub frames: usize,
    pub setting: Setting,
    pub s_a: f64,
    pub s_tsn: f64,
    pub phi: f64,
    pub psi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchRow {
    pub family: Family,
    pub temporal_pool: bool,
    pub setting: Setting,
    pub phi_bar: f64,
    pub psi_bar: f64,
    /// Cells averaged; `|B|·|K|` for a full grid.
    pub z: usize,
    pub backbones: Vec<Backbone>,
    pub frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DisentanglementReport {
    pub rows: Vec<ModelRow>,
    pub architectures: Vec<ArchRow>,
}

/// `(family, temporal_pool, backbone, frames, setting)`.
type RecordKey = (Family, bool, Backbone, usize, Setting);

fn index(records: &[RunRecord]) -> Result<BTreeMap<RecordKey, &RunRecord>> {
    let mut map = BTreeMap::new();
    for r in records {
        if !(0.0..=100.0).contains(&r.top1) {
            return Err(Error::AccuracyRange(r.top1));
        }
        if map.insert(r.key(), r).is_some() {
            return Err(Error::DuplicateRecord(r.describe()));
        }
    }
    Ok(map)
}

/// Per-model `Φ`, `Ψ` against the TSN baseline (same backbone, frames and
/// evaluation setting, no temporal pooling) and per-architecture means over
/// the `B×K` grid of baselines in each setting. Missing grid cells are an
/// error unless `allow_partial`, which averages the cells present.
pub fn disentangle(records: &[RunRecord], allow_partial: bool) -> Result<DisentanglementReport> {
    let map = index(records)?;
    let mut rows = Vec::new();
    for (key, r) in &map {
        if r.is_baseline() {
            continue;
        }
        let (_, _, b, k, setting) = key;
        let base = map
            .get(&(Family::Tsn, false, *b, *k, setting.clone()))
            .ok_or_else(|| Error::MissingBaseline(format!("TSN-{b} k={k} for {}", r.describe())))?;
        let (phi, psi) = phi_psi(r.top1, base.top1)?;
        rows.push(ModelRow {
            family: r.family,
            temporal_pool: r.temporal_pool,
            backbone: *b,
            frames: *k,
            setting: setting.clone(),
            s_a: r.top1,
            s_tsn: base.top1,
            phi,
            psi,
        });
    }
    let mut grids: BTreeMap<Setting, (BTreeSet<Backbone>, BTreeSet<usize>)> = BTreeMap::new();
    for r in map.values().filter(|r| r.is_baseline()) {
        let e = grids.entry(r.setting()).or_default();
        e.0.insert(r.backbone);
        e.1.insert(r.frames);
    }
    let mut groups: BTreeMap<(Family, bool, Setting), Vec<&ModelRow>> = BTreeMap::new();
    for row in &rows {
        groups.entry((row.family, row.temporal_pool, row.setting.clone())).or_default().push(row);
    }
    let mut architectures = Vec::new();
    for ((family, tp, setting), members) in groups {
        let (bs, ks) = &grids[&setting];
        let mut phi = 0.0;
        let mut psi = 0.0;
        let mut z = 0;
        for b in bs {
            for k in ks {
                match members.iter().find(|m| m.backbone == *b && m.frames == *k) {
                    Some(m) => {
                        phi += m.phi;
                        psi += m.psi;
                        z += 1;
                    }
                    None if allow_partial => {}
                    None => {
                        let tp = if tp { "-tp" } else { "" };
                        return Err(Error::MissingCell(format!("{family}-{b}{tp} k={k} dataset={}", setting.dataset)));
                    }
                }
            }
        }
        if z == 0 {
            continue;
        }
        architectures.push(ArchRow {
            family,
            temporal_pool: tp,
            setting,
            phi_bar: phi / z as f64,
            psi_bar: psi / z as f64,
            z,
            backbones: bs.iter().copied().collect(),
            frames: ks.iter().copied().collect(),
        });
    }
    Ok(DisentanglementReport { rows, architectures })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TpGain {
    pub family: Family,
    pub backbone: Backbone,
    pub frames: usize,
    pub setting: Setting,
    pub s_tp: f64,
    pub s_no_tp: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TpGainReport {
    pub gains: Vec<TpGain>,
    /// Records without a counterpart, described.
    pub missing: Vec<String>,
}

/// Accuracy difference rounded to 10 decimals, so that differences of
/// values given to a few decimals come out as the decimal result
/// (`74.9 − 69.8 = 5.1`).
pub fn accuracy_gain(s_tp: f64, s_no_tp: f64) -> f64 {
    libm::round((s_tp - s_no_tp) * 1e10) / 1e10
}

/// Pairs every record with its counterpart that differs only in temporal
/// pooling.
pub fn tp_gain(records: &[RunRecord]) -> Result<TpGainReport> {
    let map = index(records)?;
    let mut report = TpGainReport::default();
    for ((family, tp, b, k, setting), r) in &map {
        let other = map.get(&(*family, !tp, *b, *k, setting.clone()));
        match (tp, other) {
            (true, Some(no)) => report.gains.push(TpGain {
                family: *family,
                backbone: *b,
                frames: *k,
                setting: setting.clone(),
                s_tp: r.top1,
                s_no_tp: no.top1,
                gain: accuracy_gain(r.top1, no.top1),
            }),
            (_, None) => report.missing.push(r.describe()),
            (false, Some(_)) => {}
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub model: String,
    pub frames: usize,
    pub dataset: String,
    pub clip_flops: u64,
    pub clips: usize,
    pub crops: usize,
    pub total_flops: u64,
    pub top1: f64,
}

/// Evaluation cost (`1-clip FLOPs × clips × crops`) next to accuracy,
/// sorted by cost.
pub fn acc_vs_flops(records: &[RunRecord]) -> Vec<CostRow> {
    let mut rows: Vec<CostRow> = records
        .iter()
        .map(|r| CostRow {
            model: r.model_name(),
            frames: r.frames,
            dataset: r.dataset.clone(),
            clip_flops: r.flops,
            clips: r.clips,
            crops: r.crops,
            total_flops: r.flops * r.clips as u64 * r.crops as u64,
            top1: r.top1,
        })
        .collect();
    rows.sort_by(|a, b| {
        a.total_flops
            .cmp(&b.total_flops)
            .then_with(|| a.model.cmp(&b.model))
            .then_with(|| a.frames.cmp(&b.frames))
            .then_with(|| a.dataset.cmp(&b.dataset))
            .then_with(|| a.top1.total_cmp(&b.top1))
    });
    rows
}
