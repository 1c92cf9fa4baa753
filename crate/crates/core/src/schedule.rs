//! Training and evaluation protocols and the learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LrSchedule {
    /// Linear warmup, then a half-period cosine down to zero.
    CosineHalfPeriod,
    /// Linear warmup, then the peak rate divided by 10 at each milestone.
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainProtocol {
    pub epochs: usize,
    /// Rate at the start of warmup.
    pub base_lr: f64,
    /// Rate at the end of warmup.
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Epochs at which a `Step` schedule divides the rate by 10.
    #[serde(default)]
    pub milestones: Vec<usize>,
    /// Frame counts for progressive training; empty trains once.
    #[serde(default)]
    pub progressive: Vec<usize>,
    /// Dropout before the classifier.
    #[serde(default)]
    pub dropout: f64,
    /// Clip the global gradient norm of each batch to this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_grad_norm: Option<f64>,
}

impl TrainProtocol {
    /// Full-dataset protocol: 196 epochs, 0.01→1.6 warmup over 34 epochs,
    /// cosine after.
    pub fn full() -> Self {
        Self {
            epochs: 196,
            base_lr: 0.01,
            peak_lr: 1.6,
            warmup_epochs: 34,
            schedule: LrSchedule::CosineHalfPeriod,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 1024,
            milestones: Vec::new(),
            progressive: Vec::new(),
            dropout: 0.0,
            clip_grad_norm: None,
        }
    }

    /// Transfer finetuning: 45 epochs of cosine annealing from 0.01.
    pub fn transfer() -> Self {
        Self {
            epochs: 45,
            base_lr: 0.01,
            peak_lr: 0.01,
            warmup_epochs: 0,
            batch_size: 48,
            ..Self::full()
        }
    }

    /// Desk-scale preset for synthetic data and CI. Not a paper protocol.
    pub fn desk() -> Self {
        Self {
            epochs: 30,
            base_lr: 0.01,
            peak_lr: 0.01,
            warmup_epochs: 0,
            batch_size: 16,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidSpec("epochs and batch_size must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::InvalidSpec("warmup longer than training".into()));
        }
        if self.clip_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::InvalidSpec("clip_grad_norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidSpec("dropout must lie in [0, 1)".into()));
        }
        if self.progressive.windows(2).any(|w| w[0] >= w[1]) || self.progressive.contains(&0) {
            return Err(Error::BrokenChain("progressive frame counts must be positive and increasing".into()));
        }
        Ok(())
    }

    /// Learning rate at `epoch` (fractional), clamped to `[0, epochs]`.
    pub fn lr_at_epoch(&self, epoch: f64) -> f64 {
        let e = epoch.clamp(0.0, self.epochs as f64);
        let w = self.warmup_epochs as f64;
        if e < w {
            return self.base_lr + (self.peak_lr - self.base_lr) * e / w;
        }
        match self.schedule {
            LrSchedule::CosineHalfPeriod => {
                let span = self.epochs as f64 - w;
                let s = if span > 0.0 { (e - w) / span } else { 1.0 };
                self.peak_lr * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * s))
            }
            LrSchedule::Step => {
                let drops = self.milestones.iter().filter(|&&m| e >= m as f64).count() as i32;
                self.peak_lr * libm::pow(0.1, drops as f64)
            }
        }
    }

    /// Learning rate at `fraction ∈ [0, 1]` of training.
    pub fn lr_at(&self, fraction: f64) -> f64 {
        self.lr_at_epoch(fraction * self.epochs as f64)
    }
}

/// How predictions are combined per video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Clip,
    Video,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalProtocol {
    pub level: Level,
    pub clips: usize,
    pub crops: usize,
}

impl EvalProtocol {
    pub fn clip() -> Self {
        Self { level: Level::Clip, clips: 1, crops: 1 }
    }

    /// Video level with `m = 10` single-crop clips.
    pub fn video() -> Self {
        Self { level: Level::Video, clips: 10, crops: 1 }
    }

    /// Full-dataset evaluation: 10 clips × 3 crops.
    pub fn full() -> Self {
        Self { level: Level::Video, clips: 10, crops: 3 }
    }

    /// Two-clip, three-crop variant used for short-clip datasets.
    pub fn full_two_clip() -> Self {
        Self { level: Level::Video, clips: 2, crops: 3 }
    }

    /// Predictions averaged per video.
    pub fn predictions_per_video(&self) -> usize {
        match self.level {
            Level::Clip => 1,
            Level::Video => self.clips * self.crops,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clips == 0 || self.crops == 0 {
            return Err(Error::InvalidSpec("clips and crops must be positive".into()));
        }
        Ok(())
    }
}

/// Per-video probability average that does not depend on prediction order.
pub fn average_probabilities(predictions: &[Vec<f64>]) -> Vec<f64> {
    let k = predictions.first().map_or(0, Vec::len);
    let mut out = vec![0.0; k];
    for (j, o) in out.iter_mut().enumerate() {
        let mut col: Vec<f64> = predictions.iter().map(|p| p[j]).collect();
        *o = crate::kernels::order_invariant_mean(&mut col);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_protocol_endpoints() {
        let p = TrainProtocol::full();
        assert!((p.lr_at_epoch(0.0) - 0.01).abs() < 1e-12);
        assert!((p.lr_at_epoch(34.0) - 1.6).abs() < 1e-12);
        assert!(p.lr_at(1.0).abs() < 1e-12);
        assert!((p.lr_at_epoch(17.0) - 0.805).abs() < 1e-12);
    }

    #[test]
    fn step_schedule() {
        let p = TrainProtocol { schedule: LrSchedule::Step, milestones: vec![10, 20], warmup_epochs: 0, peak_lr: 1.0, epochs: 30, ..TrainProtocol::full() };
        assert_eq!(p.lr_at_epoch(5.0), 1.0);
        assert!((p.lr_at_epoch(15.0) - 0.1).abs() < 1e-15);
        assert!((p.lr_at_epoch(25.0) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn chain_must_increase() {
        let p = TrainProtocol { progressive: vec![16, 8], ..TrainProtocol::desk() };
        assert!(matches!(p.validate(), Err(Error::BrokenChain(_))));
    }
}
