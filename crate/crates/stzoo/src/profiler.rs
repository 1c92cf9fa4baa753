//! Cost reports: analytical FLOPs and parameters plus measured throughput
//! and maximum batch size.
//!
//! Models run one clip at a time, so a batch of `B` is `B` forward passes
//! whose activations would have to be resident together. Memory failure is
//! decided against a configured budget using the peak activation footprint
//! of one clip.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use stzoo_core::{flops, AssembledModel, Layout, VideoTensor};

use crate::error::{Result, StzooError};

pub const MIN_WARMUP: usize = 3;
pub const MIN_TIMED: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub model: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub flops: u64,
    pub params: u64,
    /// Clips per second at `max_batch`.
    pub throughput: f64,
    pub max_batch: usize,
}

/// Something that can be run at a batch size.
pub trait Workload {
    /// Whether a batch of `batch` fits; must be monotone in `batch`.
    fn fits(&self, batch: usize) -> bool;
    fn run(&mut self, batch: usize) -> Result<()>;
}

/// Largest batch that fits, by doubling then bisecting, capped at `cap`.
pub fn find_max_batch(w: &mut dyn Workload, cap: usize) -> Result<usize> {
    if cap == 0 || !w.fits(1) {
        return Err(StzooError::Invalid("model cannot run at batch size 1 within the memory budget".into()));
    }
    w.run(1)?;
    let mut lo = 1;
    while lo < cap && w.fits((lo * 2).min(cap)) {
        lo = (lo * 2).min(cap);
    }
    if lo == cap {
        return Ok(cap);
    }
    let mut hi = (lo * 2).min(cap);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if w.fits(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Clips per second over `timed` runs of `batch` after `warmup` runs.
pub fn measure_throughput(w: &mut dyn Workload, batch: usize, warmup: usize, timed: usize) -> Result<f64> {
    let (warmup, timed) = (warmup.max(MIN_WARMUP), timed.max(MIN_TIMED));
    for _ in 0..warmup {
        w.run(batch)?;
    }
    let start = Instant::now();
    for _ in 0..timed {
        w.run(batch)?;
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((timed * batch) as f64 / secs.max(f64::MIN_POSITIVE))
}

/// Forward passes of one model on a fixed zero clip.
pub struct ModelWorkload<'a> {
    model: &'a AssembledModel<f32>,
    clip: VideoTensor<f32>,
    per_clip_bytes: usize,
    fixed_bytes: usize,
    budget_bytes: usize,
}

impl<'a> ModelWorkload<'a> {
    pub fn new(model: &'a AssembledModel<f32>, hw: [usize; 2], budget_bytes: usize) -> Result<Self> {
        let f = model.arch.frames;
        let dims = match model.input_layout() {
            Layout::Batched2D => [f, 3, hw[0], hw[1]],
            Layout::Volumetric3D => [3, f, hw[0], hw[1]],
        };
        let clip = VideoTensor::zeros(model.input_layout(), dims);
        let per_clip_bytes = peak_activation_elems(model, hw)? * 4;
        let fixed_bytes = model.params.iter().map(|p| p.tensor.numel()).sum::<usize>() * 4;
        Ok(Self { model, clip, per_clip_bytes, fixed_bytes, budget_bytes })
    }

    pub fn per_clip_bytes(&self) -> usize {
        self.per_clip_bytes
    }
}

impl Workload for ModelWorkload<'_> {
    fn fits(&self, batch: usize) -> bool {
        batch.checked_mul(self.per_clip_bytes).and_then(|a| a.checked_add(self.fixed_bytes)).is_some_and(|b| b <= self.budget_bytes)
    }

    fn run(&mut self, batch: usize) -> Result<()> {
        if !self.fits(batch) {
            return Err(StzooError::Invalid(format!("batch {batch} exceeds the memory budget")));
        }
        for _ in 0..batch {
            std::hint::black_box(self.model.forward(&self.clip)?);
        }
        Ok(())
    }
}

/// Largest input plus output activation over the top-level layers.
fn peak_activation_elems(model: &AssembledModel<f32>, hw: [usize; 2]) -> Result<usize> {
    let mut dims = [3, model.arch.frames, hw[0], hw[1]];
    let mut peak = 0;
    for node in &model.nodes {
        let out = node.out_dims(dims)?;
        peak = peak.max(dims.iter().product::<usize>() + out.iter().product::<usize>());
        dims = out;
    }
    Ok(peak)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileOptions {
    pub budget_bytes: usize,
    pub max_batch_cap: usize,
    pub warmup: usize,
    pub timed: usize,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self { budget_bytes: 1 << 30, max_batch_cap: 256, warmup: MIN_WARMUP, timed: MIN_TIMED }
    }
}

pub fn profile(model: &AssembledModel<f32>, hw: [usize; 2], opts: &ProfileOptions) -> Result<CostReport> {
    let mut w = ModelWorkload::new(model, hw, opts.budget_bytes)?;
    let max_batch = find_max_batch(&mut w, opts.max_batch_cap)?;
    let throughput = measure_throughput(&mut w, max_batch, opts.warmup, opts.timed)?;
    Ok(CostReport {
        model: model.arch.canonical_name()?,
        frames: model.arch.frames,
        height: hw[0],
        width: hw[1],
        flops: flops::count_flops(model, hw)?,
        params: flops::count_params(model),
        throughput,
        max_batch,
    })
}
