//! Frame-index plans for uniform and dense sampling.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Uniform,
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Train,
    EvalClip,
    EvalVideo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    /// Frames per clip.
    pub frames: usize,
    /// Spacing between consecutive dense frames.
    #[serde(default = "one")]
    pub stride: usize,
    /// Clips per video in `EvalVideo` mode.
    #[serde(default = "one")]
    pub clips: usize,
    pub mode: Mode,
}

fn one() -> usize {
    1
}

impl SamplerConfig {
    pub fn new(strategy: Strategy, frames: usize, mode: Mode) -> Self {
        Self { strategy, frames, stride: 1, clips: 1, mode }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_clips(mut self, clips: usize) -> Self {
        self.clips = clips;
        self
    }

    pub fn with_mode(mut self, mode: Mode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.stride == 0 || self.clips == 0 {
            return Err(Error::InvalidSpec("sampler frames, stride and clips must be positive".into()));
        }
        Ok(())
    }

    /// Number of clips a plan holds.
    pub fn clip_count(&self) -> usize {
        match self.mode {
            Mode::EvalVideo => self.clips,
            _ => 1,
        }
    }

    /// Frames spanned by one dense clip.
    pub fn window(&self) -> usize {
        (self.frames - 1) * self.stride + 1
    }
}

/// Frame indices per clip, each clip exactly `frames` long.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClipIndexPlan {
    pub clips: Vec<Vec<usize>>,
}

/// Segment `i` of `f` equal segments over `n` frames. Segments shorter than
/// one frame (when `n < f`) are widened to hold their start frame.
pub fn segment(n: usize, f: usize, i: usize) -> (usize, usize) {
    let start = i * n / f;
    let end = ((i + 1) * n / f).max(start + 1);
    (start, end)
}

/// Round `num / den` half away from zero, for non-negative operands.
fn round_div(num: usize, den: usize) -> usize {
    (2 * num + den) / (2 * den)
}

/// Builds the plan for a video of `n` frames. Only `Train` mode draws from
/// `rng`.
pub fn sample<R: Rng + ?Sized>(cfg: &SamplerConfig, n: usize, rng: &mut R) -> Result<ClipIndexPlan> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Invalid("video has no frames".into()));
    }
    let f = cfg.frames;
    let clips = match cfg.strategy {
        Strategy::Uniform => {
            let seg = |i| segment(n, f, i);
            match cfg.mode {
                Mode::Train => {
                    let clip = (0..f).map(|i| { let (s, e) = seg(i); rng.gen_range(s..e).min(n - 1) }).collect();
                    alloc::vec![clip]
                }
                Mode::EvalClip => alloc::vec![uniform_offset_clip(n, f, 0)],
                Mode::EvalVideo => {
                    let m = cfg.clips as isize;
                    (-(m / 2)..m - m / 2).map(|off| uniform_offset_clip(n, f, off)).collect()
                }
            }
        }
        Strategy::Dense => {
            let window = cfg.window();
            let span = n.saturating_sub(window);
            let starts: Vec<usize> = match cfg.mode {
                Mode::Train => alloc::vec![rng.gen_range(0..=span)],
                Mode::EvalClip => alloc::vec![0],
                Mode::EvalVideo if cfg.clips == 1 => alloc::vec![0],
                Mode::EvalVideo => (0..cfg.clips).map(|j| round_div(j * span, cfg.clips - 1)).collect(),
            };
            starts.into_iter().map(|s| (0..f).map(|i| (s + i * cfg.stride) % n).collect()).collect()
        }
    };
    Ok(ClipIndexPlan { clips })
}

/// Middle frame of each segment shifted by `offset`, clamped into the
/// segment.
fn uniform_offset_clip(n: usize, f: usize, offset: isize) -> Vec<usize> {
    (0..f)
        .map(|i| {
            let (s, e) = segment(n, f, i);
            let mid = (s + (e - s) / 2) as isize;
            let idx = (mid + offset).clamp(s as isize, e as isize - 1) as usize;
            idx.min(n - 1)
        })
        .collect()
}
