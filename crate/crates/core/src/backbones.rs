//! 2D backbone topologies with their spatial-pooling positions and
//! temporal-module insertion points.
//!
//! Weight names follow the torchvision module paths (`layer1.0.conv1.weight`,
//! `inception3a.branch2.1.bn.running_var`, ...), so converted ImageNet
//! checkpoints load without renaming. 2D conv kernels are stored as
//! `[C_out, C_in, kh, kw]`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::archspec::Backbone;
use crate::error::{Error, Result};
use crate::graph::WeightMap;
use crate::init;
use crate::kernels::{ConvGeom, PoolGeom};
use crate::real::Real;
use crate::tensor::{Layout, Tensor, VideoTensor};

/// Smallest spatial extent that survives the five stride-2 reductions.
pub const MIN_SPATIAL: usize = 32;

/// Number of spatial-pooling positions every backbone exposes.
pub const POOLING_POSITIONS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub geom: ConvGeom,
    pub bias: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerNode {
    Conv(ConvLayer),
    BatchNorm { name: String, channels: usize, eps: f64 },
    Relu,
    MaxPool(PoolGeom),
    /// `relu(body(x) + shortcut(x))`; empty shortcut is the identity.
    Residual { name: String, body: Vec<LayerNode>, shortcut: Vec<LayerNode> },
    /// Parallel branches concatenated along channels.
    Inception { name: String, branches: Vec<Vec<LayerNode>> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv2d,
    BatchNorm,
    Relu,
    MaxPool,
    ResidualBlock,
    InceptionModule,
}

impl LayerNode {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerNode::Conv(_) => LayerKind::Conv2d,
            LayerNode::BatchNorm { .. } => LayerKind::BatchNorm,
            LayerNode::Relu => LayerKind::Relu,
            LayerNode::MaxPool(_) => LayerKind::MaxPool,
            LayerNode::Residual { .. } => LayerKind::ResidualBlock,
            LayerNode::Inception { .. } => LayerKind::InceptionModule,
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            LayerNode::Conv(c) => Some(&c.name),
            LayerNode::BatchNorm { name, .. }
            | LayerNode::Residual { name, .. }
            | LayerNode::Inception { name, .. } => Some(name),
            LayerNode::Relu | LayerNode::MaxPool(_) => None,
        }
    }

    /// Output channel count for `c_in` input channels.
    pub fn out_channels(&self, c_in: usize) -> usize {
        match self {
            LayerNode::Conv(c) => c.geom.c_out,
            LayerNode::Residual { body, .. } => seq_channels(body, c_in),
            LayerNode::Inception { branches, .. } => branches.iter().map(|b| seq_channels(b, c_in)).sum(),
            _ => c_in,
        }
    }

    /// Spatial output extent `(h, w)` for an `(h, w)` input.
    pub fn out_hw(&self, hw: [usize; 2]) -> Result<[usize; 2]> {
        let via = |o: [usize; 3]| [o[1], o[2]];
        match self {
            LayerNode::Conv(c) => Ok(via(c.geom.out_dims([1, hw[0], hw[1]])?)),
            LayerNode::MaxPool(p) => Ok(via(p.out_dims([1, hw[0], hw[1]])?)),
            LayerNode::Residual { body, .. } => seq_hw(body, hw),
            LayerNode::Inception { branches, .. } => seq_hw(&branches[0], hw),
            _ => Ok(hw),
        }
    }

    /// Every weight slot as `(name, shape, trainable)`, in visiting order.
    pub fn slots(&self, out: &mut Vec<(String, Vec<usize>, bool)>) {
        match self {
            LayerNode::Conv(c) => {
                let g = c.geom;
                out.push((format!("{}.weight", c.name), vec![g.c_out, g.c_in, g.kernel[1], g.kernel[2]], true));
                if c.bias {
                    out.push((format!("{}.bias", c.name), vec![g.c_out], true));
                }
            }
            LayerNode::BatchNorm { name, channels, .. } => {
                for (suffix, trainable) in
                    [("weight", true), ("bias", true), ("running_mean", false), ("running_var", false)]
                {
                    out.push((format!("{name}.{suffix}"), vec![*channels], trainable));
                }
            }
            LayerNode::Residual { body, shortcut, .. } => {
                body.iter().chain(shortcut).for_each(|l| l.slots(out));
            }
            LayerNode::Inception { branches, .. } => branches.iter().flatten().for_each(|l| l.slots(out)),
            LayerNode::Relu | LayerNode::MaxPool(_) => {}
        }
    }

    /// Whether the layer halves (or more) the spatial extent.
    fn downsamples(&self) -> bool {
        match self {
            LayerNode::Conv(c) => c.geom.stride[1] > 1,
            LayerNode::MaxPool(p) => p.stride[1] > 1,
            LayerNode::Residual { body, .. } => body.iter().any(|l| l.downsamples()),
            LayerNode::Inception { branches, .. } => branches.iter().flatten().any(|l| l.downsamples()),
            _ => false,
        }
    }
}

fn seq_channels(layers: &[LayerNode], mut c: usize) -> usize {
    for l in layers {
        c = l.out_channels(c);
    }
    c
}

fn seq_hw(layers: &[LayerNode], mut hw: [usize; 2]) -> Result<[usize; 2]> {
    for l in layers {
        hw = l.out_hw(hw)?;
    }
    Ok(hw)
}

/// Where a temporal module goes relative to an insertion point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InsertStyle {
    /// At the start of the residual (non-identity) path.
    ResidualBody,
    /// Right after the node (inception modules).
    After,
    /// Right before the node (TinyNet stage convs).
    Before,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stage {
    pub label: String,
    pub layers: Range<usize>,
}

/// An ordered 2D layer graph with its weights and annotations. The
/// classifier (`fc.weight`, `fc.bias`) sits after global average pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct BackboneGraph<T> {
    pub backbone: Backbone,
    pub layers: Vec<LayerNode>,
    pub pooling_positions: Vec<usize>,
    pub insertion_points: Vec<usize>,
    pub insert_style: InsertStyle,
    pub stages: Vec<Stage>,
    pub in_channels: usize,
    pub feature_channels: usize,
    pub num_classes: usize,
    pub weights: WeightMap<T>,
}

/// Weight source for [`build_backbone`].
#[derive(Debug, Clone, Copy)]
pub enum BackboneInit<'a, T> {
    Random { seed: u64 },
    /// Loads every slot by name. The classifier is re-initialised from
    /// `seed` when `num_classes` differs from the stored head.
    Pretrained { weights: &'a WeightMap<T>, seed: u64 },
}

impl<T: Real> BackboneGraph<T> {
    /// Every weight slot of the backbone and classifier.
    pub fn slots(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        self.layers.iter().for_each(|l| l.slots(&mut out));
        out.push((String::from("fc.weight"), vec![self.num_classes, self.feature_channels], true));
        out.push((String::from("fc.bias"), vec![self.num_classes], true));
        out
    }

    pub fn param_count(&self) -> usize {
        self.slots().iter().filter(|s| s.2).map(|s| s.1.iter().product::<usize>()).sum()
    }

    pub fn stage_of(&self, layer: usize) -> Option<&str> {
        self.stages.iter().find(|s| s.layers.contains(&layer)).map(|s| s.label.as_str())
    }

    /// Channel count entering each top-level layer.
    pub fn input_channels(&self) -> Vec<usize> {
        let mut c = self.in_channels;
        self.layers
            .iter()
            .map(|l| {
                let here = c;
                c = l.out_channels(c);
                here
            })
            .collect()
    }

    /// Spatial extent of the final feature map.
    pub fn feature_hw(&self, hw: [usize; 2]) -> Result<[usize; 2]> {
        seq_hw(&self.layers, hw)
    }
}

/// Standard ImageNet-style random initialisation of one slot.
fn random_slot<T: Real>(rng: &mut ChaCha8Rng, name: &str, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = if name.ends_with("running_var") || (shape.len() == 1 && name.ends_with("weight")) {
        vec![T::one(); n]
    } else if shape.len() == 1 {
        vec![T::zero(); n]
    } else if shape.len() == 2 {
        init::uniform(rng, n, 1.0 / libm::sqrt(shape[1] as f64))
    } else {
        init::kaiming_normal(rng, n, shape[1..].iter().product())
    };
    Tensor::from_vec(shape, data).expect("slot shape")
}

pub fn build_backbone<T: Real>(
    backbone: Backbone,
    num_classes: usize,
    init: BackboneInit<'_, T>,
) -> Result<BackboneGraph<T>> {
    if num_classes == 0 {
        return Err(Error::InvalidSpec("num_classes must be positive".into()));
    }
    let mut g = match backbone {
        Backbone::TinyNet => tinynet(),
        Backbone::ResNet18 => resnet(backbone, false, [2, 2, 2, 2]),
        Backbone::ResNet50 => resnet(backbone, true, [3, 4, 6, 3]),
        Backbone::InceptionV1 => inception_v1(),
    };
    g.num_classes = num_classes;
    g.pooling_positions = g.layers.iter().enumerate().filter(|(_, l)| l.downsamples()).map(|(i, _)| i).collect();
    debug_assert_eq!(g.pooling_positions.len(), POOLING_POSITIONS);
    let slots = g.slots();
    let mut weights = WeightMap::new();
    match init {
        BackboneInit::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (name, shape, _) in &slots {
                weights.insert(name.clone(), random_slot(&mut rng, name, shape));
            }
        }
        BackboneInit::Pretrained { weights: src, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (name, shape, _) in &slots {
                let is_head = name.starts_with("fc.");
                match src.get(name) {
                    Some(t) if t.shape() == shape.as_slice() => weights.insert(name.clone(), t.clone()),
                    Some(_) | None if is_head => weights.insert(name.clone(), random_slot(&mut rng, name, shape)),
                    Some(t) => {
                        return Err(Error::WeightShape {
                            name: name.clone(),
                            expected: shape.clone(),
                            found: t.shape().to_vec(),
                        })
                    }
                    None => return Err(Error::MissingWeight(name.clone())),
                }
            }
            if let Some(extra) = src.0.keys().find(|k| !slots.iter().any(|s| &s.0 == *k)) {
                return Err(Error::UnexpectedWeight(extra.clone()));
            }
        }
    }
    g.weights = weights;
    Ok(g)
}

fn empty_graph<T>(backbone: Backbone) -> BackboneGraph<T> {
    BackboneGraph {
        backbone,
        layers: Vec::new(),
        pooling_positions: Vec::new(),
        insertion_points: Vec::new(),
        insert_style: InsertStyle::Before,
        stages: Vec::new(),
        in_channels: 3,
        feature_channels: 0,
        num_classes: 0,
        weights: WeightMap::new(),
    }
}

fn conv(name: impl Into<String>, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> LayerNode {
    LayerNode::Conv(ConvLayer { name: name.into(), geom: ConvGeom::spatial(c_in, c_out, k, stride, pad), bias: false })
}

fn bn(name: impl Into<String>, channels: usize, eps: f64) -> LayerNode {
    LayerNode::BatchNorm { name: name.into(), channels, eps }
}

/// TinyNet: five stages of 3×3 conv (with bias) + ReLU + 2×2 max-pool.
pub const TINYNET_CHANNELS: [usize; 5] = [8, 16, 32, 64, 64];

fn tinynet<T>() -> BackboneGraph<T> {
    let mut g = empty_graph(Backbone::TinyNet);
    let mut c_in = 3;
    for (s, &c) in TINYNET_CHANNELS.iter().enumerate() {
        let start = g.layers.len();
        if s > 0 {
            g.insertion_points.push(start);
        }
        g.layers.push(LayerNode::Conv(ConvLayer {
            name: format!("stage{}.conv", s + 1),
            geom: ConvGeom::spatial(c_in, c, 3, 1, 1),
            bias: true,
        }));
        g.layers.push(LayerNode::Relu);
        g.layers.push(LayerNode::MaxPool(PoolGeom::spatial(2, 2, 0, false)));
        g.stages.push(Stage { label: format!("stage{}", s + 1), layers: start..g.layers.len() });
        c_in = c;
    }
    g.insert_style = InsertStyle::Before;
    g.feature_channels = c_in;
    g
}

fn resnet<T>(backbone: Backbone, bottleneck: bool, blocks: [usize; 4]) -> BackboneGraph<T> {
    let mut g = empty_graph(backbone);
    let eps = 1e-5;
    g.layers.push(conv("conv1", 3, 64, 7, 2, 3));
    g.layers.push(bn("bn1", 64, eps));
    g.layers.push(LayerNode::Relu);
    g.layers.push(LayerNode::MaxPool(PoolGeom::spatial(3, 2, 1, false)));
    g.stages.push(Stage { label: "stage1".into(), layers: 0..4 });
    let expansion = if bottleneck { 4 } else { 1 };
    let mut c_in = 64;
    for (li, &n) in blocks.iter().enumerate() {
        let planes = 64 << li;
        let start = g.layers.len();
        for bi in 0..n {
            let stride = if li > 0 && bi == 0 { 2 } else { 1 };
            let name = format!("layer{}.{bi}", li + 1);
            let c_out = planes * expansion;
            let body = if bottleneck {
                vec![
                    conv(format!("{name}.conv1"), c_in, planes, 1, 1, 0),
                    bn(format!("{name}.bn1"), planes, eps),
                    LayerNode::Relu,
                    conv(format!("{name}.conv2"), planes, planes, 3, stride, 1),
                    bn(format!("{name}.bn2"), planes, eps),
                    LayerNode::Relu,
                    conv(format!("{name}.conv3"), planes, c_out, 1, 1, 0),
                    bn(format!("{name}.bn3"), c_out, eps),
                ]
            } else {
                vec![
                    conv(format!("{name}.conv1"), c_in, planes, 3, stride, 1),
                    bn(format!("{name}.bn1"), planes, eps),
                    LayerNode::Relu,
                    conv(format!("{name}.conv2"), planes, planes, 3, 1, 1),
                    bn(format!("{name}.bn2"), planes, eps),
                ]
            };
            let shortcut = if stride != 1 || c_in != c_out {
                vec![conv(format!("{name}.downsample.0"), c_in, c_out, 1, stride, 0), bn(format!("{name}.downsample.1"), c_out, eps)]
            } else {
                Vec::new()
            };
            g.insertion_points.push(g.layers.len());
            g.layers.push(LayerNode::Residual { name, body, shortcut });
            c_in = c_out;
        }
        g.stages.push(Stage { label: format!("stage{}", li + 2), layers: start..g.layers.len() });
    }
    g.insert_style = InsertStyle::ResidualBody;
    g.feature_channels = c_in;
    g
}

fn basic(name: String, c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Vec<LayerNode> {
    vec![
        conv(format!("{name}.conv"), c_in, c_out, k, stride, pad),
        bn(format!("{name}.bn"), c_out, 1e-3),
        LayerNode::Relu,
    ]
}

fn inception(name: &str, c_in: usize, ch: [usize; 6]) -> LayerNode {
    let [b1, b2r, b2, b3r, b3, b4] = ch;
    let mut br2 = basic(format!("{name}.branch2.0"), c_in, b2r, 1, 1, 0);
    br2.extend(basic(format!("{name}.branch2.1"), b2r, b2, 3, 1, 1));
    // The "5×5" branch uses a 3×3 kernel, as in the reference ImageNet model.
    let mut br3 = basic(format!("{name}.branch3.0"), c_in, b3r, 1, 1, 0);
    br3.extend(basic(format!("{name}.branch3.1"), b3r, b3, 3, 1, 1));
    let mut br4 = vec![LayerNode::MaxPool(PoolGeom::spatial(3, 1, 1, true))];
    br4.extend(basic(format!("{name}.branch4.1"), c_in, b4, 1, 1, 0));
    LayerNode::Inception {
        name: name.into(),
        branches: vec![basic(format!("{name}.branch1"), c_in, b1, 1, 1, 0), br2, br3, br4],
    }
}

fn inception_v1<T>() -> BackboneGraph<T> {
    let mut g = empty_graph(Backbone::InceptionV1);
    let pool = |k| LayerNode::MaxPool(PoolGeom::spatial(k, 2, 0, true));
    let l = &mut g.layers;
    l.extend(basic("conv1".into(), 3, 64, 7, 2, 3));
    l.push(pool(3));
    g.stages.push(Stage { label: "stage1".into(), layers: 0..l.len() });
    let s = l.len();
    l.extend(basic("conv2".into(), 64, 64, 1, 1, 0));
    l.extend(basic("conv3".into(), 64, 192, 3, 1, 1));
    l.push(pool(3));
    g.stages.push(Stage { label: "stage2".into(), layers: s..l.len() });
    let modules: [(&str, usize, [usize; 6]); 9] = [
        ("inception3a", 192, [64, 96, 128, 16, 32, 32]),
        ("inception3b", 256, [128, 128, 192, 32, 96, 64]),
        ("inception4a", 480, [192, 96, 208, 16, 48, 64]),
        ("inception4b", 512, [160, 112, 224, 24, 64, 64]),
        ("inception4c", 512, [128, 128, 256, 24, 64, 64]),
        ("inception4d", 512, [112, 144, 288, 32, 64, 64]),
        ("inception4e", 528, [256, 160, 320, 32, 128, 128]),
        ("inception5a", 832, [256, 160, 320, 32, 128, 128]),
        ("inception5b", 832, [384, 192, 384, 48, 128, 128]),
    ];
    let mut s = l.len();
    for (i, (name, c_in, ch)) in modules.into_iter().enumerate() {
        g.insertion_points.push(l.len());
        l.push(inception(name, c_in, ch));
        // stage boundaries follow the max-pools after 3b and 4e
        if i == 1 || i == 6 {
            l.push(pool(if i == 1 { 3 } else { 2 }));
            g.stages.push(Stage { label: format!("stage{}", g.stages.len() + 1), layers: s..l.len() });
            s = l.len();
        }
    }
    g.stages.push(Stage { label: "stage5".into(), layers: s..l.len() });
    g.insert_style = InsertStyle::After;
    g.feature_channels = 1024;
    g
}

/// Runs every frame of a `Batched2D` clip through the 2D backbone and
/// returns per-frame feature maps, still `Batched2D`.
pub fn forward_2d<T: Real>(graph: &BackboneGraph<T>, input: &VideoTensor<T>) -> Result<VideoTensor<T>> {
    if input.layout() != Layout::Batched2D {
        return Err(Error::LayoutMismatch { expected: Layout::Batched2D.name(), found: input.layout().name() });
    }
    check_spatial(input.height(), input.width())?;
    if input.channels() != graph.in_channels {
        return Err(Error::Shape(format!("expected {} input channels, got {}", graph.in_channels, input.channels())));
    }
    let trunk = crate::factory::lower_plain(graph)?;
    let vol = input.to_layout(Layout::Volumetric3D);
    let act = crate::graph::Act::new(vol.into_values(), input_dims(input));
    let y = crate::graph::forward_seq(&trunk.nodes, &trunk.params, act, None)?;
    VideoTensor::new(Layout::Volumetric3D, y.dims, y.data).map(|v| v.to_layout(Layout::Batched2D))
}

fn input_dims<T: Real>(v: &VideoTensor<T>) -> [usize; 4] {
    [v.channels(), v.frames(), v.height(), v.width()]
}

pub fn check_spatial(height: usize, width: usize) -> Result<()> {
    if height < MIN_SPATIAL || width < MIN_SPATIAL {
        return Err(Error::SpatialTooSmall { height, width, min: MIN_SPATIAL });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn build(b: Backbone) -> BackboneGraph<f32> {
        build_backbone(b, 1000, BackboneInit::Random { seed: 0 }).unwrap()
    }

    #[test]
    fn published_parameter_counts() {
        assert_eq!(build(Backbone::ResNet18).param_count(), 11_689_512);
        assert_eq!(build(Backbone::ResNet50).param_count(), 25_557_032);
        assert_eq!(build(Backbone::InceptionV1).param_count(), 6_624_904);
    }

    #[test]
    fn annotations() {
        for (b, ins) in [(Backbone::ResNet50, 16), (Backbone::ResNet18, 8), (Backbone::InceptionV1, 9), (Backbone::TinyNet, 4)] {
            let g = build(b);
            assert_eq!(g.insertion_points.len(), ins, "{b}");
            assert_eq!(g.pooling_positions.len(), 5, "{b}");
            assert_eq!(g.stages.len(), 5, "{b}");
            for hw in [32, 64, 96, 224] {
                assert_eq!(g.feature_hw([hw, hw]).unwrap(), [hw / 32, hw / 32], "{b} at {hw}");
            }
        }
    }

    #[test]
    fn tinynet_feature_shape() {
        let g = build(Backbone::TinyNet);
        let x = VideoTensor::new(Layout::Batched2D, [8, 3, 64, 64], vec![0.5; 8 * 3 * 64 * 64]).unwrap();
        let y = forward_2d(&g, &x).unwrap();
        assert_eq!(y.dims(), [8, 64, 2, 2]);
        let small = VideoTensor::new(Layout::Batched2D, [1, 3, 16, 64], vec![0.0; 3 * 16 * 64]).unwrap();
        assert!(matches!(forward_2d(&g, &small), Err(Error::SpatialTooSmall { .. })));
    }
}
