//! Model assembly: backbone + temporal modules + temporal pooling + head.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::archspec::{ArchSpec, Family};
use crate::backbones::{self, BackboneGraph, BackboneInit, ConvLayer, InsertStyle, LayerNode};
use crate::error::{Error, Result};
use crate::graph::{
    self, Act, AggregationNode, BatchNormNode, BranchNode, Cache, ConvKind, ConvNode, Grads, Node, ParamId, Params,
    ResidualNode, ShiftNode, WeightMap,
};
use crate::init;
use crate::kernels::{self, ConvGeom, PoolGeom};
use crate::real::Real;
use crate::temporal::{self, TEMPORAL_KERNEL};
use crate::tensor::{Layout, Tensor, VideoTensor};

/// How per-frame or per-volume features become class scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Consensus {
    /// Per-frame classifier, logits averaged over frames.
    AverageLogits,
    /// Global average over time and space, then one classifier.
    None,
}

/// Weight source for [`assemble`].
#[derive(Debug, Clone, Copy)]
pub enum Init<'a, T> {
    /// 2D ImageNet weights: inflated for 3D families, loaded directly
    /// otherwise. `seed` drives any freshly initialised slot.
    ImageNet { weights: &'a WeightMap<T>, seed: u64 },
    Scratch { seed: u64 },
    /// Exact weights of a previously assembled model. Slots whose name
    /// starts with an allowlisted prefix may be missing or mis-shaped.
    FromCheckpoint { weights: &'a WeightMap<T>, allowlist: &'a [String] },
}

/// A layer list plus its weights, without a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Trunk<T> {
    pub nodes: Vec<Node>,
    pub params: Params<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ConvPolicy {
    Plain,
    Inflate,
    Factorize,
}

struct Lowerer<'a, T> {
    weights: &'a WeightMap<T>,
    params: Params<T>,
    policy: ConvPolicy,
    /// Present for scratch 3D init: inflated kernels are drawn fresh.
    fresh: Option<ChaCha8Rng>,
    conv_index: usize,
}

impl<T: Real> Lowerer<'_, T> {
    fn take(&self, name: &str) -> Result<Tensor<T>> {
        self.weights.get(name).cloned().ok_or_else(|| Error::MissingWeight(name.into()))
    }

    fn push(&mut self, name: String, t: Tensor<T>, trainable: bool) -> ParamId {
        self.params.push(name, t, trainable)
    }

    fn conv(&mut self, c: &ConvLayer) -> Result<Node> {
        let index = self.conv_index;
        self.conv_index += 1;
        let w2 = self.take(&format!("{}.weight", c.name))?;
        let bias = match c.bias {
            true => Some(self.take(&format!("{}.bias", c.name))?),
            false => None,
        };
        let mut bias_id = bias.map(|b| self.push(format!("{}.bias", c.name), b, true));
        let g = c.geom;
        let eligible = g.kernel[1] > 1 || g.kernel[2] > 1;
        let policy = match self.policy {
            ConvPolicy::Factorize if index == 0 => ConvPolicy::Inflate,
            p => p,
        };
        let wname = format!("{}.weight", c.name);
        if !eligible || policy == ConvPolicy::Plain {
            let shape = g.weight_shape();
            let w = self.push(wname, w2.reshape(&shape)?, true);
            return Ok(Node::Conv(ConvNode { name: c.name.clone(), geom: g, weight: w, bias: bias_id, kind: ConvKind::Spatial }));
        }
        let g3 = ConvGeom {
            kernel: [TEMPORAL_KERNEL, g.kernel[1], g.kernel[2]],
            stride: [1, g.stride[1], g.stride[2]],
            pad: [TEMPORAL_KERNEL / 2, g.pad[1], g.pad[2]],
            ..g
        };
        if policy == ConvPolicy::Inflate {
            let w3 = match self.fresh.as_mut() {
                Some(rng) => Tensor::from_vec(&g3.weight_shape(), init::kaiming_normal(rng, g3.c_out * g3.taps(), g3.taps()))?,
                None => temporal::inflate(&w2, TEMPORAL_KERNEL)?,
            };
            let w = self.push(wname, w3, true);
            return Ok(Node::Conv(ConvNode { name: c.name.clone(), geom: g3, weight: w, bias: bias_id, kind: ConvKind::Inflated }));
        }
        let (gs, gt) = temporal::factorize(&g3, index)?;
        let ws = self.push(wname, w2.reshape(&gs.weight_shape())?, true);
        let tname = format!("{}.temporal", c.name);
        let wt = self.push(format!("{tname}.weight"), temporal::identity_temporal_kernel(gt.c_out, TEMPORAL_KERNEL), true);
        // The bias moves to the end of the pair so the identity-initialised
        // temporal conv keeps the 2D output unchanged.
        let spatial_bias = None;
        let temporal_bias = bias_id.take();
        Ok(Node::Factorized {
            spatial: ConvNode { name: c.name.clone(), geom: gs, weight: ws, bias: spatial_bias, kind: ConvKind::FactorizedSpatial },
            temporal: ConvNode { name: tname, geom: gt, weight: wt, bias: temporal_bias, kind: ConvKind::FactorizedTemporal },
        })
    }

    fn layer(&mut self, l: &LayerNode, prefix: Vec<Node>) -> Result<Node> {
        Ok(match l {
            LayerNode::Conv(c) => self.conv(c)?,
            LayerNode::BatchNorm { name, channels, eps } => {
                let mut id = |suffix: &str, trainable: bool| -> Result<ParamId> {
                    let full = format!("{name}.{suffix}");
                    let t = self.take(&full)?;
                    Ok(self.push(full, t, trainable))
                };
                let gamma = id("weight", true)?;
                let beta = id("bias", true)?;
                let mean = id("running_mean", false)?;
                let var = id("running_var", false)?;
                Node::BatchNorm(BatchNormNode { name: name.clone(), channels: *channels, eps: *eps, gamma, beta, mean, var })
            }
            LayerNode::Relu => Node::Relu,
            LayerNode::MaxPool(p) => Node::MaxPool(*p),
            LayerNode::Residual { name, body, shortcut } => {
                let mut b = prefix;
                for n in body {
                    b.push(self.layer(n, Vec::new())?);
                }
                let s = self.seq(shortcut)?;
                Node::Residual(ResidualNode { name: name.clone(), body: b, shortcut: s })
            }
            LayerNode::Inception { name, branches } => {
                let mut out = Vec::with_capacity(branches.len());
                for br in branches {
                    out.push(self.seq(br)?);
                }
                Node::Branches(BranchNode { name: name.clone(), branches: out })
            }
        })
    }

    fn seq(&mut self, layers: &[LayerNode]) -> Result<Vec<Node>> {
        layers.iter().map(|l| self.layer(l, Vec::new())).collect()
    }
}

/// The backbone as plain per-frame 2D layers, without a classifier.
pub(crate) fn lower_plain<T: Real>(graph: &BackboneGraph<T>) -> Result<Trunk<T>> {
    let mut lw = Lowerer { weights: &graph.weights, params: Params::new(), policy: ConvPolicy::Plain, fresh: None, conv_index: 0 };
    let nodes = lw.seq(&graph.layers)?;
    Ok(Trunk { nodes, params: lw.params })
}

/// Counts from a walk over an assembled model.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Audit {
    pub tam: usize,
    pub tsm: usize,
    pub conv1d: usize,
    pub nln: usize,
    pub temporal_pools: usize,
    /// Backbone layer index each temporal pool follows.
    pub temporal_pool_sites: Vec<usize>,
    pub spatial_convs: usize,
    pub inflated_convs: usize,
    pub factorized_convs: usize,
    /// Backbone convs with a spatial kernel larger than 1×1.
    pub eligible_convs: usize,
    /// Kind of the network's first convolution.
    pub first_conv: Option<ConvKind>,
}

impl Audit {
    pub fn temporal_modules(&self) -> usize {
        self.tam + self.tsm + self.conv1d + self.nln
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssembledModel<T> {
    pub arch: ArchSpec,
    pub nodes: Vec<Node>,
    pub params: Params<T>,
    pub consensus: Consensus,
    pub feature_channels: usize,
    pub head_weight: ParamId,
    pub head_bias: ParamId,
    /// Backbone layer index of each top-level node, `None` for inserted ones.
    pub origins: Vec<Option<usize>>,
    pub pooling_positions: Vec<usize>,
}

/// Saved state of a training forward pass.
#[derive(Debug)]
pub struct Tape<T> {
    caches: Vec<Cache<T>>,
    feat_dims: [usize; 4],
    pooled: Vec<T>,
    /// Inverted-dropout scale per pooled feature.
    mask: Option<Vec<T>>,
}

pub fn assemble<T: Real>(spec: &ArchSpec, init: Init<'_, T>) -> Result<AssembledModel<T>> {
    spec.ensure_valid()?;
    let (bb_init, fresh_seed) = match init {
        Init::ImageNet { weights, seed } => (BackboneInit::Pretrained { weights, seed }, seed),
        Init::Scratch { seed } => (BackboneInit::Random { seed }, seed),
        Init::FromCheckpoint { .. } => (BackboneInit::Random { seed: 0 }, 0),
    };
    let graph = backbones::build_backbone(spec.backbone, spec.num_classes, bb_init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(fresh_seed ^ 0x9e37_79b9_7f4a_7c15);
    let policy = match spec.family {
        Family::I3d => ConvPolicy::Inflate,
        Family::S3d => ConvPolicy::Factorize,
        _ => ConvPolicy::Plain,
    };
    let fresh = matches!(init, Init::Scratch { .. } | Init::FromCheckpoint { .. })
        .then(|| ChaCha8Rng::seed_from_u64(fresh_seed ^ 0x3c6e_f372_fe94_f82b));
    let mut lw = Lowerer { weights: &graph.weights, params: Params::new(), policy, fresh, conv_index: 0 };

    let n_ins = graph.insertion_points.len();
    let chosen: Vec<usize> = if spec.family.has_per_block_modules() {
        temporal::place_modules(n_ins, spec.placement).into_iter().map(|i| graph.insertion_points[i]).collect()
    } else {
        Vec::new()
    };
    let nln: Vec<usize> = if spec.family == Family::TsnNln { temporal::nln_sites(&graph)? } else { Vec::new() };
    let pool_sites: Vec<usize> = if spec.temporal_pool {
        graph.pooling_positions[graph.pooling_positions.len() - crate::archspec::TEMPORAL_POOLS..].to_vec()
    } else {
        Vec::new()
    };
    let in_ch = graph.input_channels();
    let out_ch: Vec<usize> = graph.layers.iter().zip(&in_ch).map(|(l, &c)| l.out_channels(c)).collect();

    let mut nodes = Vec::new();
    let mut origins = Vec::new();
    for (i, layer) in graph.layers.iter().enumerate() {
        let module_here = chosen.contains(&i);
        let channels = match graph.insert_style {
            InsertStyle::After => out_ch[i],
            _ => in_ch[i],
        };
        let site = layer.name().map(String::from).unwrap_or_else(|| format!("layer{i}"));
        let site = String::from(site.trim_end_matches(".conv"));
        let mut module = Vec::new();
        if module_here {
            module.push(temporal_module(spec.family, &site, channels, &mut lw.params)?);
        }
        match graph.insert_style {
            InsertStyle::ResidualBody => {
                nodes.push(lw.layer(layer, module)?);
                origins.push(Some(i));
            }
            InsertStyle::Before => {
                for m in module {
                    nodes.push(m);
                    origins.push(None);
                }
                nodes.push(lw.layer(layer, Vec::new())?);
                origins.push(Some(i));
            }
            InsertStyle::After => {
                nodes.push(lw.layer(layer, Vec::new())?);
                origins.push(Some(i));
                for m in module {
                    nodes.push(m);
                    origins.push(None);
                }
            }
        }
        if let Some(k) = nln.iter().position(|&s| s == i) {
            let block = temporal::build_nln_block(spec.backbone, &format!("nonlocal{}", k + 1), out_ch[i], &mut lw.params, &mut rng)?;
            nodes.push(Node::NonLocal(alloc::boxed::Box::new(block)));
            origins.push(None);
        }
        if pool_sites.contains(&i) {
            nodes.push(Node::TemporalMaxPool(PoolGeom::temporal()));
            origins.push(None);
        }
    }
    let mut params = lw.params;
    let head_weight = params.push("fc.weight".into(), graph.weights.get("fc.weight").cloned().expect("head"), true);
    let head_bias = params.push("fc.bias".into(), graph.weights.get("fc.bias").cloned().expect("head"), true);
    if let Init::FromCheckpoint { weights, allowlist } = init {
        params.load_strict(weights, allowlist)?;
    }
    Ok(AssembledModel {
        arch: *spec,
        nodes,
        params,
        consensus: if spec.family.is_3d() { Consensus::None } else { Consensus::AverageLogits },
        feature_channels: graph.feature_channels,
        head_weight,
        head_bias,
        origins,
        pooling_positions: graph.pooling_positions.clone(),
    })
}

fn temporal_module<T: Real>(family: Family, site: &str, channels: usize, params: &mut Params<T>) -> Result<Node> {
    Ok(match family {
        Family::Tam => {
            let name = format!("{site}.tam");
            let weight = params.push(format!("{name}.weight"), temporal::identity_tam_weights(channels), true);
            Node::TemporalAggregation(AggregationNode { name, channels, weight })
        }
        Family::Tsm => Node::TemporalShift(ShiftNode { channels, fraction: temporal::DEFAULT_SHIFT_FRACTION }),
        Family::Conv1d => {
            let name = format!("{site}.tconv");
            let geom = ConvGeom::temporal(channels, channels, TEMPORAL_KERNEL);
            let weight = params.push(format!("{name}.weight"), temporal::identity_temporal_kernel(channels, TEMPORAL_KERNEL), true);
            Node::Conv(ConvNode { name, geom, weight, bias: None, kind: ConvKind::TemporalModule })
        }
        f => return Err(Error::InvalidSpec(format!("{f} has no per-block temporal module"))),
    })
}

impl<T: Real> AssembledModel<T> {
    /// Layout the model expects its clips in.
    pub fn input_layout(&self) -> Layout {
        if self.arch.family.is_3d() {
            Layout::Volumetric3D
        } else {
            Layout::Batched2D
        }
    }

    fn input_act(&self, clip: &VideoTensor<T>) -> Result<Act<T>> {
        let layout = self.input_layout();
        if clip.layout() != layout {
            return Err(Error::LayoutMismatch { expected: layout.name(), found: clip.layout().name() });
        }
        if clip.frames() != self.arch.frames {
            return Err(Error::FrameMismatch { expected: self.arch.frames, found: clip.frames() });
        }
        backbones::check_spatial(clip.height(), clip.width())?;
        let dims = [clip.channels(), clip.frames(), clip.height(), clip.width()];
        let values = match layout {
            Layout::Volumetric3D => clip.values().to_vec(),
            Layout::Batched2D => clip.to_layout(Layout::Volumetric3D).into_values(),
        };
        Ok(Act::new(values, dims))
    }

    /// Evaluation-mode logits for one clip.
    pub fn forward(&self, clip: &VideoTensor<T>) -> Result<Vec<T>> {
        let x = self.input_act(clip)?;
        let feat = graph::forward_seq(&self.nodes, &self.params, x, None)?;
        let (logits, _) = self.head_forward(&feat, None);
        Ok(logits)
    }

    /// Logits plus everything the backward pass needs.
    pub fn forward_train(&self, clip: &VideoTensor<T>) -> Result<(Vec<T>, Tape<T>)> {
        self.forward_train_inner(clip, None)
    }

    /// As [`forward_train`](Self::forward_train), dropping each pooled
    /// feature with probability `p` before the classifier.
    pub fn forward_train_dropout<R: Rng + ?Sized>(
        &self,
        clip: &VideoTensor<T>,
        p: f64,
        rng: &mut R,
    ) -> Result<(Vec<T>, Tape<T>)> {
        if p <= 0.0 {
            return self.forward_train_inner(clip, None);
        }
        let rows = self.head_rows(self.feature_dims([clip.height(), clip.width()])?[1]);
        let keep = T::from_f64c(1.0 / (1.0 - p));
        let mask = (0..rows * self.feature_channels).map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep }).collect();
        self.forward_train_inner(clip, Some(mask))
    }

    fn forward_train_inner(&self, clip: &VideoTensor<T>, mask: Option<Vec<T>>) -> Result<(Vec<T>, Tape<T>)> {
        let x = self.input_act(clip)?;
        let mut caches = Vec::new();
        let feat = graph::forward_seq(&self.nodes, &self.params, x, Some(&mut caches))?;
        let (logits, pooled) = self.head_forward(&feat, mask.as_deref());
        Ok((logits, Tape { caches, feat_dims: feat.dims, pooled, mask }))
    }

    /// Accumulates parameter gradients of `dlogits` into `grads`.
    pub fn backward(&self, tape: Tape<T>, dlogits: &[T], grads: &mut Grads<T>) -> Result<()> {
        let [c, t, h, w] = tape.feat_dims;
        let k = self.arch.num_classes;
        let rows = self.head_rows(t);
        let scale = T::one() / T::from_usize(rows).unwrap();
        let dy: Vec<T> = (0..rows).flat_map(|_| dlogits.iter().map(move |&g| g * scale)).collect();
        let mut dw = core::mem::take(grads.slot_mut_vec(self.head_weight));
        let mut db = core::mem::take(grads.slot_mut_vec(self.head_bias));
        let mut dpooled = kernels::linear_backward(&tape.pooled, rows, self.params.get(self.head_weight), c, k, &dy, &mut dw, &mut db);
        *grads.slot_mut_vec(self.head_weight) = dw;
        *grads.slot_mut_vec(self.head_bias) = db;
        if let Some(mask) = &tape.mask {
            dpooled.iter_mut().zip(mask).for_each(|(d, &m)| *d *= m);
        }
        let plane = h * w;
        let per_row = T::from_usize(plane * t / rows).unwrap();
        let mut dfeat = vec![T::zero(); c * t * plane];
        for ch in 0..c {
            for f in 0..t {
                let g = match self.consensus {
                    Consensus::AverageLogits => dpooled[f * c + ch],
                    Consensus::None => dpooled[ch],
                } / per_row;
                dfeat[(ch * t + f) * plane..][..plane].fill(g);
            }
        }
        graph::backward_seq(&self.nodes, &self.params, tape.caches, Act::new(dfeat, tape.feat_dims), grads, false)?;
        Ok(())
    }

    /// Cross-entropy loss of one labelled clip; gradients are added to `grads`.
    pub fn loss_and_grad(&self, clip: &VideoTensor<T>, label: usize, grads: &mut Grads<T>) -> Result<(T, Vec<T>)> {
        if label >= self.arch.num_classes {
            return Err(Error::Invalid(format!("label {label} out of range for {} classes", self.arch.num_classes)));
        }
        let (logits, tape) = self.forward_train(clip)?;
        let (loss, dlogits) = kernels::softmax_cross_entropy(&logits, label);
        self.backward(tape, &dlogits, grads)?;
        Ok((loss, logits))
    }

    fn head_rows(&self, t: usize) -> usize {
        match self.consensus {
            Consensus::AverageLogits => t,
            Consensus::None => 1,
        }
    }

    /// Returns logits and the pooled features fed to the classifier.
    fn head_forward(&self, feat: &Act<T>, mask: Option<&[T]>) -> (Vec<T>, Vec<T>) {
        let [c, t, h, w] = feat.dims;
        let k = self.arch.num_classes;
        let plane = h * w;
        let rows = self.head_rows(t);
        let mut pooled = vec![T::zero(); rows * c];
        for ch in 0..c {
            for f in 0..t {
                let s: T = feat.data[(ch * t + f) * plane..][..plane].iter().copied().sum();
                match self.consensus {
                    Consensus::AverageLogits => pooled[f * c + ch] = s / T::from_usize(plane).unwrap(),
                    Consensus::None => pooled[ch] += s,
                }
            }
            if self.consensus == Consensus::None {
                pooled[ch] = pooled[ch] / T::from_usize(t * plane).unwrap();
            }
        }
        if let Some(mask) = mask {
            pooled.iter_mut().zip(mask).for_each(|(v, &m)| *v *= m);
        }
        let y = kernels::linear_forward(&pooled, rows, self.params.get(self.head_weight), self.params.get(self.head_bias), c, k);
        let logits = (0..k)
            .map(|j| {
                let mut col: Vec<T> = (0..rows).map(|r| y[r * k + j]).collect();
                kernels::order_invariant_mean(&mut col)
            })
            .collect();
        (logits, pooled)
    }

    /// Structural counts for checking the family rules.
    pub fn audit(&self) -> Audit {
        let mut a = Audit::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Node::TemporalMaxPool(_) = node {
                let site = self.origins[..i].iter().rev().find_map(|o| *o);
                a.temporal_pool_sites.extend(site);
            }
            node.visit(&mut |n| match n {
                Node::Conv(c) => {
                    match c.kind {
                        ConvKind::Spatial => a.spatial_convs += 1,
                        ConvKind::Inflated => a.inflated_convs += 1,
                        ConvKind::TemporalModule => a.conv1d += 1,
                        _ => {}
                    }
                    if matches!(c.kind, ConvKind::Spatial | ConvKind::Inflated) {
                        if c.geom.kernel[1] > 1 || c.geom.kernel[2] > 1 {
                            a.eligible_convs += 1;
                        }
                        a.first_conv.get_or_insert(c.kind);
                    }
                }
                Node::Factorized { .. } => {
                    a.factorized_convs += 1;
                    a.eligible_convs += 1;
                    a.first_conv.get_or_insert(ConvKind::FactorizedSpatial);
                }
                Node::TemporalAggregation(_) => a.tam += 1,
                Node::TemporalShift(_) => a.tsm += 1,
                Node::NonLocal(_) => a.nln += 1,
                Node::TemporalMaxPool(_) => a.temporal_pools += 1,
                _ => {}
            });
        }
        a
    }

    /// Trainable parameter count.
    pub fn param_count(&self) -> usize {
        self.params.trainable_numel()
    }

    /// Same weights, new input length.
    pub fn retarget_frames(mut self, frames: usize) -> Result<Self> {
        let spec = self.arch.with_frames(frames);
        spec.ensure_valid()?;
        self.arch = spec;
        Ok(self)
    }

    /// Feature extent `[C, T, h, w]` reaching the head for an `H×W` input.
    pub fn feature_dims(&self, hw: [usize; 2]) -> Result<[usize; 4]> {
        backbones::check_spatial(hw[0], hw[1])?;
        graph::seq_out_dims(&self.nodes, [3, self.arch.frames, hw[0], hw[1]])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archspec::{Backbone, Placement};

    fn clip(spec: &ArchSpec, seed: u64) -> VideoTensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [spec.frames, 3, 32, 32];
        let v = init::normal(&mut rng, dims.iter().product(), 1.0);
        let t = VideoTensor::new(Layout::Batched2D, dims, v).unwrap();
        if spec.family.is_3d() { t.to_layout(Layout::Volumetric3D) } else { t }
    }

    #[test]
    fn tsn_is_per_frame_backbone_plus_average() {
        let spec = ArchSpec::new(Family::Tsn, Backbone::TinyNet, 4, 5);
        let m = assemble::<f32>(&spec, Init::Scratch { seed: 3 }).unwrap();
        let x = clip(&spec, 1);
        let logits = m.forward(&x).unwrap();
        let g = backbones::build_backbone::<f32>(Backbone::TinyNet, 5, BackboneInit::Random { seed: 3 }).unwrap();
        let feats = backbones::forward_2d(&g, &x).unwrap();
        let w = g.weights.get("fc.weight").unwrap().data();
        let b = g.weights.get("fc.bias").unwrap().data();
        let c = g.feature_channels;
        let plane = feats.height() * feats.width();
        for k in 0..5 {
            let mut acc = 0.0f64;
            for f in 0..4 {
                let mut z = b[k] as f64;
                for ch in 0..c {
                    let s: f32 = feats.values()[(f * c + ch) * plane..][..plane].iter().sum();
                    z += w[k * c + ch] as f64 * (s / plane as f32) as f64;
                }
                acc += z;
            }
            assert!((logits[k] as f64 - acc / 4.0).abs() < 1e-4, "{k}");
        }
    }

    #[test]
    fn permuted_frames_give_identical_tsn_logits() {
        let spec = ArchSpec::new(Family::Tsn, Backbone::TinyNet, 8, 3);
        let m = assemble::<f32>(&spec, Init::Scratch { seed: 5 }).unwrap();
        let x = clip(&spec, 2);
        let base = m.forward(&x).unwrap();
        let y = m.forward(&x.permute_frames(&[3, 1, 7, 0, 2, 6, 5, 4]).unwrap()).unwrap();
        assert_eq!(base, y);
    }

    #[test]
    fn model_gradients_match_finite_differences() {
        for family in [Family::Tam, Family::S3d, Family::I3d, Family::Tsm, Family::Conv1d] {
            let spec = ArchSpec::new(family, Backbone::TinyNet, 8, 3).with_temporal_pool(true);
            let m = assemble::<f64>(&spec, Init::Scratch { seed: 9 }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            let dims = [8, 3, 32, 32];
            let x = VideoTensor::new(Layout::Batched2D, dims, init::normal(&mut rng, 8 * 3 * 1024, 1.0)).unwrap();
            let x = if family.is_3d() { x.to_layout(Layout::Volumetric3D) } else { x };
            let mut grads = m.params.zero_grads();
            m.loss_and_grad(&x, 1, &mut grads).unwrap();
            let loss = |m: &AssembledModel<f64>| {
                let l = m.forward(&x).unwrap();
                kernels::softmax_cross_entropy(&l, 1).0
            };
            // spot-check a few entries of the head, the temporal modules and the stem
            for name in ["fc.weight", "fc.bias", "stage1.conv.weight", "stage3.tam.weight", "stage4.tconv.weight", "stage2.conv.temporal.weight"] {
                let Some(id) = m.params.find(name) else { continue };
                for j in [0, 1, 2] {
                    let mut mp = m.clone();
                    let h = 1e-7;
                    mp.params.param_mut(id).tensor.data_mut()[j] += h;
                    let lp = loss(&mp);
                    mp.params.param_mut(id).tensor.data_mut()[j] -= 2.0 * h;
                    let lm = loss(&mp);
                    let fd = (lp - lm) / (2.0 * h);
                    let an = grads.slot(id)[j];
                    assert!((fd - an).abs() < 1e-5 * (1.0 + fd.abs()), "{family} {name}[{j}] fd={fd} an={an}");
                }
            }
        }
    }

    #[test]
    fn placement_and_counts() {
        let spec = ArchSpec::new(Family::Tam, Backbone::TinyNet, 8, 2).with_placement(Placement::TopHalf);
        let m = assemble::<f32>(&spec, Init::Scratch { seed: 0 }).unwrap();
        assert_eq!(m.audit().tam, 2);
        assert!(m.params.find("stage4.tam.weight").is_some());
        assert!(m.params.find("stage2.tam.weight").is_none());
    }

    #[test]
    fn retarget_preserves_weights() {
        let spec = ArchSpec::new(Family::Tam, Backbone::TinyNet, 8, 2);
        let m = assemble::<f32>(&spec, Init::Scratch { seed: 0 }).unwrap();
        let m16 = m.clone().retarget_frames(16).unwrap();
        assert_eq!(m16.params, m.params);
        assert_eq!(m16.forward(&clip(&m16.arch, 1)).unwrap().len(), 2);
        assert_eq!(m16.retarget_frames(8).unwrap(), m);
        let tp = assemble::<f32>(&spec.with_temporal_pool(true), Init::Scratch { seed: 0 }).unwrap();
        assert!(tp.retarget_frames(4).is_err());
    }
}
