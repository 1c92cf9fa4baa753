//! Dense row-major tensors and the clip tensor exchanged with models.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }
}

impl<T> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(alloc::format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }
}

/// Memory layout of a clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Layout {
    /// A batch of frames, `F×C×H×W`: what 2D models consume.
    Batched2D,
    /// One volume, `C×F×H×W`: what 3D models consume.
    Volumetric3D,
}

impl Layout {
    pub fn name(self) -> &'static str {
        match self {
            Layout::Batched2D => "Batched2D (FxCxHxW)",
            Layout::Volumetric3D => "Volumetric3D (CxFxHxW)",
        }
    }
}

/// A single clip of `frames` frames with `channels` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor<T> {
    layout: Layout,
    /// Extents in layout order.
    dims: [usize; 4],
    values: Vec<T>,
}

impl<T: Real> VideoTensor<T> {
    pub fn new(layout: Layout, dims: [usize; 4], values: Vec<T>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(alloc::format!("clip dims must be positive, got {dims:?}")));
        }
        if dims.iter().product::<usize>() != values.len() {
            return Err(Error::Shape(alloc::format!(
                "clip dims {dims:?} need {} values, got {}",
                dims.iter().product::<usize>(),
                values.len()
            )));
        }
        Ok(Self { layout, dims, values })
    }

    pub fn zeros(layout: Layout, dims: [usize; 4]) -> Self {
        Self { layout, dims, values: vec![T::zero(); dims.iter().product()] }
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn frames(&self) -> usize {
        match self.layout {
            Layout::Batched2D => self.dims[0],
            Layout::Volumetric3D => self.dims[1],
        }
    }

    pub fn channels(&self) -> usize {
        match self.layout {
            Layout::Batched2D => self.dims[1],
            Layout::Volumetric3D => self.dims[0],
        }
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    /// Same clip in the requested layout: an element permutation swapping the
    /// frame and channel axes.
    pub fn to_layout(&self, layout: Layout) -> Self {
        if layout == self.layout {
            return self.clone();
        }
        let [a, b, h, w] = self.dims;
        let plane = h * w;
        let mut out = vec![T::zero(); self.values.len()];
        for i in 0..a {
            for j in 0..b {
                let src = (i * b + j) * plane;
                let dst = (j * a + i) * plane;
                out[dst..dst + plane].copy_from_slice(&self.values[src..src + plane]);
            }
        }
        Self { layout, dims: [b, a, h, w], values: out }
    }

    /// Reorder the frame axis: output frame `t` is input frame `order[t]`.
    pub fn permute_frames(&self, order: &[usize]) -> Result<Self> {
        let f = self.frames();
        let mut seen = vec![false; f];
        if order.len() != f || order.iter().any(|&i| i >= f || core::mem::replace(&mut seen[i], true)) {
            return Err(Error::Invalid(alloc::format!("{order:?} is not a permutation of 0..{f}")));
        }
        let vol = self.to_layout(Layout::Batched2D);
        let frame = vol.dims[1] * vol.dims[2] * vol.dims[3];
        let mut out = Vec::with_capacity(vol.values.len());
        for &src in order {
            out.extend_from_slice(&vol.values[src * frame..(src + 1) * frame]);
        }
        let permuted = Self { layout: Layout::Batched2D, dims: vol.dims, values: out };
        Ok(permuted.to_layout(self.layout))
    }
}
