//! Temporal mechanisms: inflation, factorization, TAM, TSM, temporal
//! convolution, non-local blocks, temporal max pooling and module placement.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::archspec::{Backbone, Placement};
use crate::backbones::BackboneGraph;
use crate::error::{Error, Result};
use crate::graph::{ConvKind, ConvNode, NonLocalNode, Params};
use crate::init;
use crate::kernels::{self, ConvGeom, PoolGeom};
use crate::real::Real;
use crate::tensor::{Layout, Tensor, VideoTensor};

/// Temporal kernel used by inflation, factorization, temporal convolutions
/// and temporal pooling.
pub const TEMPORAL_KERNEL: usize = 3;

/// Default TSM shift fraction per direction.
pub const DEFAULT_SHIFT_FRACTION: f64 = 1.0 / 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemporalKind {
    Inflate3D,
    FactorizedST,
    Tam,
    Tsm,
    Conv1D,
    Nln,
    TemporalMaxPool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalModuleSpec {
    pub kind: TemporalKind,
    pub temporal_kernel: usize,
    pub channels: usize,
    pub shift_fraction: Option<f64>,
    pub pool_stride: Option<usize>,
}

impl TemporalModuleSpec {
    pub fn new(kind: TemporalKind, channels: usize) -> Self {
        Self {
            kind,
            temporal_kernel: TEMPORAL_KERNEL,
            channels,
            shift_fraction: (kind == TemporalKind::Tsm).then_some(DEFAULT_SHIFT_FRACTION),
            pool_stride: (kind == TemporalKind::TemporalMaxPool).then_some(2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != TemporalKind::Nln && self.kind != TemporalKind::Tsm && self.temporal_kernel != TEMPORAL_KERNEL {
            return Err(Error::InvalidSpec(format!("{:?} needs temporal kernel 3", self.kind)));
        }
        if let Some(f) = self.shift_fraction {
            check_fraction(f)?;
        }
        Ok(())
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f <= 0.5) {
        return Err(Error::InvalidSpec(format!("shift fraction {f} outside (0, 0.5]")));
    }
    Ok(())
}

/// Copies a `[C_out, C_in, kh, kw]` kernel `t` times along time, giving
/// `[C_out, C_in, t, kh, kw]`. No rescaling.
pub fn inflate<T: Real>(weight: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    let &[co, ci, kh, kw] = weight.shape() else {
        return Err(Error::Shape(format!("inflate expects a 4D kernel, got {:?}", weight.shape())));
    };
    if t == 0 {
        return Err(Error::InvalidSpec("temporal kernel must be at least 1".into()));
    }
    let plane = kh * kw;
    let mut out = Vec::with_capacity(weight.numel() * t);
    for chunk in weight.data().chunks(plane) {
        for _ in 0..t {
            out.extend_from_slice(chunk);
        }
    }
    Tensor::from_vec(&[co, ci, t, kh, kw], out)
}

/// Splits a 3D convolution into a spatial convolution with the original
/// channels followed by a temporal convolution over its outputs. The
/// network's first convolution (`conv_index == 0`) is never factorized.
pub fn factorize(g: &ConvGeom, conv_index: usize) -> Result<(ConvGeom, ConvGeom)> {
    if conv_index == 0 {
        return Err(Error::FirstConvFactorization);
    }
    let spatial = ConvGeom {
        c_in: g.c_in,
        c_out: g.c_out,
        kernel: [1, g.kernel[1], g.kernel[2]],
        stride: [1, g.stride[1], g.stride[2]],
        pad: [0, g.pad[1], g.pad[2]],
    };
    let temporal = ConvGeom {
        c_in: g.c_out,
        c_out: g.c_out,
        kernel: [g.kernel[0], 1, 1],
        stride: [g.stride[0], 1, 1],
        pad: [g.pad[0], 0, 0],
    };
    Ok((spatial, temporal))
}

/// `[C, C, t, 1, 1]` kernel that passes each channel through its centre tap.
pub fn identity_temporal_kernel<T: Real>(channels: usize, t: usize) -> Tensor<T> {
    let mut w = vec![T::zero(); channels * channels * t];
    for c in 0..channels {
        w[(c * channels + c) * t + t / 2] = T::one();
    }
    Tensor::from_vec(&[channels, channels, t, 1, 1], w).expect("shape")
}

/// Per-channel `(0, 1, 0)` taps.
pub fn identity_tam_weights<T: Real>(channels: usize) -> Tensor<T> {
    let mut w = vec![T::zero(); channels * 3];
    for c in 0..channels {
        w[c * 3 + 1] = T::one();
    }
    Tensor::from_vec(&[channels, 3], w).expect("shape")
}

fn with_volume<T: Real>(
    x: &VideoTensor<T>,
    f: impl FnOnce(&[T], [usize; 4]) -> Result<(Vec<T>, [usize; 4])>,
) -> Result<VideoTensor<T>> {
    let vol = x.to_layout(Layout::Volumetric3D);
    let (y, dims) = f(vol.values(), vol.dims())?;
    Ok(VideoTensor::new(Layout::Volumetric3D, dims, y)?.to_layout(x.layout()))
}

/// Depthwise 3-tap temporal aggregation; `weights` is `C×3`.
pub fn apply_tam<T: Real>(x: &VideoTensor<T>, weights: &[T]) -> Result<VideoTensor<T>> {
    if weights.len() != x.channels() * 3 {
        return Err(Error::Shape(format!(
            "TAM weights hold {} values, {} channels need {}",
            weights.len(),
            x.channels(),
            x.channels() * 3
        )));
    }
    with_volume(x, |v, dims| Ok((kernels::temporal_depthwise_forward(v, dims, weights), dims)))
}

/// Shifts the first `⌊f·C⌋` channels forward one frame, the next group
/// backward, and zero-fills the boundary.
pub fn apply_tsm<T: Real>(x: &VideoTensor<T>, shift_fraction: f64) -> Result<VideoTensor<T>> {
    check_fraction(shift_fraction)?;
    let fold = kernels::shift_fold(x.channels(), shift_fraction);
    with_volume(x, |v, dims| Ok((kernels::temporal_shift_forward(v, dims, fold), dims)))
}

/// Max pooling along time with kernel 3, stride 2, padding 1.
pub fn temporal_max_pool<T: Real>(x: &VideoTensor<T>) -> Result<VideoTensor<T>> {
    let g = PoolGeom::temporal();
    with_volume(x, |v, [c, t, h, w]| {
        let (y, _, o) = kernels::maxpool3d_forward(&g, v, c, [t, h, w])?;
        Ok((y, [c, o[0], o[1], o[2]]))
    })
}

/// Indices (into `0..n`) that receive a temporal module.
pub fn place_modules(n: usize, placement: Placement) -> Vec<usize> {
    let half = n.div_ceil(2);
    match placement {
        Placement::All => (0..n).collect(),
        Placement::BottomHalf => (0..half).collect(),
        Placement::TopHalf => (n - half..n).collect(),
        Placement::UniformHalf => (0..n).step_by(2).collect(),
    }
}

/// Insertion-point indices after which TSN+NLN adds non-local blocks:
/// the first three blocks of stage 2 and two blocks of stage 3 (every other
/// block, starting from the second).
pub fn nln_sites<T: Real>(graph: &BackboneGraph<T>) -> Result<Vec<usize>> {
    if !graph.backbone.is_resnet() {
        return Err(Error::NonResNetBackbone(graph.backbone.name().into()));
    }
    let in_stage = |label: &str| -> Vec<usize> {
        graph.insertion_points.iter().copied().filter(|&i| graph.stage_of(i) == Some(label)).collect()
    };
    let mut sites: Vec<usize> = in_stage("stage2").into_iter().take(3).collect();
    sites.extend(in_stage("stage3").into_iter().skip(1).step_by(2).take(2));
    Ok(sites)
}

/// Embedded-Gaussian non-local block over `channels` with a half-width
/// inner embedding. The output projection starts at zero so the block is
/// the identity until trained.
pub fn build_nln_block<T: Real, R: Rng + ?Sized>(
    backbone: Backbone,
    name: &str,
    channels: usize,
    params: &mut Params<T>,
    rng: &mut R,
) -> Result<NonLocalNode> {
    if !backbone.is_resnet() {
        return Err(Error::NonResNetBackbone(backbone.name().into()));
    }
    let inner = (channels / 2).max(1);
    let mut proj = |suffix: &str, c_in: usize, c_out: usize, zero: bool, params: &mut Params<T>| {
        let geom = ConvGeom::spatial(c_in, c_out, 1, 1, 0);
        let n = c_in * c_out;
        let w = if zero { vec![T::zero(); n] } else { init::kaiming_normal(rng, n, c_in) };
        let full = format!("{name}.{suffix}");
        let weight = params.push(format!("{full}.weight"), Tensor::from_vec(&geom.weight_shape(), w).expect("shape"), true);
        let bias = params.push(format!("{full}.bias"), Tensor::zeros(&[c_out]), true);
        ConvNode { name: full, geom, weight, bias: Some(bias), kind: ConvKind::NonLocalProjection }
    };
    let theta = proj("theta", channels, inner, false, params);
    let phi = proj("phi", channels, inner, false, params);
    let g = proj("g", channels, inner, false, params);
    let out = proj("out", inner, channels, true, params);
    Ok(NonLocalNode { name: String::from(name), channels, inner, theta, phi, g, out })
}
