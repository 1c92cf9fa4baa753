//! Analytical cost counting. FLOPs are multiply-accumulates (MACs) of one
//! clip: convolutions (all taps, padding included), fully connected layers,
//! TAM taps and non-local matrix products. Pooling, normalisation,
//! activations, shifts and additions are not counted.

use alloc::format;

use crate::error::{Error, Result};
use crate::factory::{AssembledModel, Consensus};
use crate::graph::{self, Node};
use crate::kernels::ConvGeom;
use crate::real::Real;

/// MACs of one convolution over a `[T, H, W]` input.
pub fn conv_macs(g: &ConvGeom, input: [usize; 3]) -> Result<u64> {
    let out = g.out_dims(input)?;
    Ok(g.c_out as u64 * out.iter().product::<usize>() as u64 * g.taps() as u64)
}

/// MACs of a node sequence over a `[C, T, H, W]` input.
pub fn sequence_macs(nodes: &[Node], input: [usize; 4]) -> Result<u64> {
    graph::seq_macs(nodes, input)
}

/// 1-clip MACs of an assembled model at spatial size `hw`.
pub fn count_flops<T: Real>(model: &AssembledModel<T>, hw: [usize; 2]) -> Result<u64> {
    let input = [3, model.arch.frames, hw[0], hw[1]];
    if input.contains(&0) {
        return Err(Error::Shape(format!("empty input {input:?}")));
    }
    let trunk = graph::seq_macs(&model.nodes, input)?;
    let [c, t, _, _] = model.feature_dims(hw)?;
    let rows = match model.consensus {
        Consensus::AverageLogits => t,
        Consensus::None => 1,
    };
    Ok(trunk + (rows * c * model.arch.num_classes) as u64)
}

/// Trainable parameters (normalisation statistics excluded).
pub fn count_params<T: Real>(model: &AssembledModel<T>) -> u64 {
    model.param_count() as u64
}
