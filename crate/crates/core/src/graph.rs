//! Layer graphs: parameter storage, node types, and the forward/backward
//! passes over single-sample `C×T×H×W` activations.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom, PoolGeom};
use crate::real::Real;
use crate::tensor::Tensor;

/// Named arrays, as read from a weight file or checkpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightMap<T>(pub BTreeMap<String, Tensor<T>>);

impl<T> WeightMap<T> {
    pub fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.0.insert(name.into(), t);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.0.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One weight slot. Buffers (normalisation statistics) are not trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    entries: Vec<Param<T>>,
}

impl<T: Real> Params<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn push(&mut self, name: String, tensor: Tensor<T>, trainable: bool) -> ParamId {
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.entries.push(Param { name, tensor, trainable });
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        self.entries[id.0].tensor.data()
    }

    pub fn param(&self, id: ParamId) -> &Param<T> {
        &self.entries[id.0]
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.entries[id.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.entries.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    /// Element count of trainable slots.
    pub fn trainable_numel(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.tensor.numel()).sum()
    }

    pub fn to_weight_map(&self) -> WeightMap<T> {
        WeightMap(self.entries.iter().map(|p| (p.name.clone(), p.tensor.clone())).collect())
    }

    /// Strict load: every slot must be present with an identical shape and
    /// the map may not carry extra names. Slots whose name starts with an
    /// `allowlist` prefix may instead be missing or mis-shaped, in which
    /// case they keep their current values.
    pub fn load_strict(&mut self, map: &WeightMap<T>, allowlist: &[String]) -> Result<()> {
        let allowed = |name: &str| allowlist.iter().any(|a| name.starts_with(a.as_str()));
        for p in &mut self.entries {
            match map.get(&p.name) {
                Some(t) if t.shape() == p.tensor.shape() => p.tensor = t.clone(),
                Some(_) | None if allowed(&p.name) => {}
                Some(t) => {
                    return Err(Error::WeightShape {
                        name: p.name.clone(),
                        expected: p.tensor.shape().to_vec(),
                        found: t.shape().to_vec(),
                    })
                }
                None => return Err(Error::MissingWeight(p.name.clone())),
            }
        }
        for name in map.0.keys() {
            if self.find(name).is_none() && !allowed(name) {
                return Err(Error::UnexpectedWeight(name.clone()));
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) -> Grads<T> {
        Grads {
            slots: self
                .entries
                .iter()
                .map(|p| if p.trainable { vec![T::zero(); p.tensor.numel()] } else { Vec::new() })
                .collect(),
        }
    }
}

/// Gradients aligned with a [`Params`] store; buffers have empty slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    slots: Vec<Vec<T>>,
}

impl<T: Real> Grads<T> {
    pub fn slot(&self, id: ParamId) -> &[T] {
        &self.slots[id.0]
    }

    pub fn slot_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.slots[id.0]
    }

    pub(crate) fn slot_mut_vec(&mut self, id: ParamId) -> &mut Vec<T> {
        &mut self.slots[id.0]
    }

    pub fn slots(&self) -> &[Vec<T>] {
        &self.slots
    }

    pub fn add_assign(&mut self, other: &Grads<T>) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for slot in &mut self.slots {
            slot.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Euclidean norm over every slot, accumulated in double precision.
    pub fn global_norm(&self) -> f64 {
        let sq: f64 = self.slots.iter().flatten().map(|v| { let x = v.to_f64c(); x * x }).sum();
        libm::sqrt(sq)
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm
    /// before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            self.scale(T::from_f64c(max_norm / norm));
        }
        norm
    }
}

/// One sample's activation, `C×T×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Act<T> {
    pub data: Vec<T>,
    pub dims: [usize; 4],
}

impl<T> Act<T> {
    pub fn new(data: Vec<T>, dims: [usize; 4]) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        Self { data, dims }
    }

    fn thw(&self) -> [usize; 3] {
        [self.dims[1], self.dims[2], self.dims[3]]
    }
}

/// How a convolution relates to the 2D backbone it was derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvKind {
    /// Per-frame spatial convolution (temporal kernel 1).
    Spatial,
    /// 2D kernel inflated to temporal kernel 3.
    Inflated,
    /// Spatial half of a factorized 3D convolution.
    FactorizedSpatial,
    /// Temporal half of a factorized 3D convolution.
    FactorizedTemporal,
    /// Stand-alone temporal convolution module (`C→C`, kernel 3).
    TemporalModule,
    /// Projection inside a non-local block.
    NonLocalProjection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvNode {
    pub name: String,
    pub geom: ConvGeom,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub kind: ConvKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormNode {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftNode {
    pub channels: usize,
    pub fraction: f64,
}

impl ShiftNode {
    pub fn fold(&self) -> usize {
        kernels::shift_fold(self.channels, self.fraction)
    }
}

/// Depthwise 3-tap temporal aggregation (TAM).
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationNode {
    pub name: String,
    pub channels: usize,
    pub weight: ParamId,
}

/// Embedded-Gaussian non-local block with a residual connection.
#[derive(Debug, Clone, PartialEq)]
pub struct NonLocalNode {
    pub name: String,
    pub channels: usize,
    pub inner: usize,
    pub theta: ConvNode,
    pub phi: ConvNode,
    pub g: ConvNode,
    pub out: ConvNode,
}

/// `relu(body(x) + shortcut(x))`; an empty shortcut is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualNode {
    pub name: String,
    pub body: Vec<Node>,
    pub shortcut: Vec<Node>,
}

/// Parallel branches concatenated along channels.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchNode {
    pub name: String,
    pub branches: Vec<Vec<Node>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Conv(ConvNode),
    /// Spatial convolution followed by a temporal convolution.
    Factorized { spatial: ConvNode, temporal: ConvNode },
    BatchNorm(BatchNormNode),
    Relu,
    MaxPool(PoolGeom),
    TemporalMaxPool(PoolGeom),
    TemporalShift(ShiftNode),
    TemporalAggregation(AggregationNode),
    NonLocal(Box<NonLocalNode>),
    Residual(ResidualNode),
    Branches(BranchNode),
}

/// Saved state of one node's forward pass.
#[derive(Debug)]
pub enum Cache<T> {
    Conv { x: Vec<T>, dims: [usize; 3] },
    Factorized { spatial: Box<Cache<T>>, temporal: Box<Cache<T>> },
    BatchNorm { x: Vec<T> },
    Relu { y: Vec<T> },
    Pool { argmax: Vec<u32>, input_len: usize, input_dims: [usize; 4] },
    Shift { dims: [usize; 4] },
    Aggregation { x: Vec<T>, dims: [usize; 4] },
    NonLocal(Box<NonLocalCache<T>>),
    Residual { body: Vec<Cache<T>>, shortcut: Vec<Cache<T>>, y: Vec<T>, dims: [usize; 4] },
    Branches { branches: Vec<Vec<Cache<T>>>, channels: Vec<usize>, out_dims: [usize; 4] },
}

#[derive(Debug)]
pub struct NonLocalCache<T> {
    x: Vec<T>,
    dims: [usize; 4],
    theta: Vec<T>,
    phi: Vec<T>,
    g: Vec<T>,
    attn: Vec<T>,
    mixed: Vec<T>,
}

fn conv_forward<T: Real>(
    c: &ConvNode,
    params: &Params<T>,
    x: Act<T>,
    train: bool,
) -> Result<(Act<T>, Option<Cache<T>>)> {
    if x.dims[0] != c.geom.c_in {
        return Err(Error::Shape(format!(
            "{}: expects {} input channels, got {}",
            c.name, c.geom.c_in, x.dims[0]
        )));
    }
    let dims = x.thw();
    let (y, out) =
        kernels::conv3d_forward(&c.geom, &x.data, dims, params.get(c.weight), c.bias.map(|b| params.get(b)))?;
    let cache = train.then_some(Cache::Conv { x: x.data, dims });
    Ok((Act::new(y, [c.geom.c_out, out[0], out[1], out[2]]), cache))
}

fn conv_backward<T: Real>(
    c: &ConvNode,
    params: &Params<T>,
    x: &[T],
    dims: [usize; 3],
    dy: &[T],
    grads: &mut Grads<T>,
    need_dx: bool,
) -> Result<Option<Vec<T>>> {
    let mut dw = core::mem::take(&mut grads.slots[c.weight.0]);
    let mut db = c.bias.map(|b| core::mem::take(&mut grads.slots[b.0]));
    let trainable_w = !dw.is_empty();
    let mut scratch = Vec::new();
    if !trainable_w {
        scratch = vec![T::zero(); params.get(c.weight).len()];
    }
    let dx = kernels::conv3d_backward(
        &c.geom,
        x,
        dims,
        params.get(c.weight),
        dy,
        if trainable_w { &mut dw } else { &mut scratch },
        db.as_deref_mut().filter(|d| !d.is_empty()),
        need_dx,
    )?;
    grads.slots[c.weight.0] = dw;
    if let (Some(b), Some(d)) = (c.bias, db) {
        grads.slots[b.0] = d;
    }
    Ok(dx)
}

/// Forward over a node sequence, recording caches when `tape` is given.
pub fn forward_seq<T: Real>(
    nodes: &[Node],
    params: &Params<T>,
    mut x: Act<T>,
    mut tape: Option<&mut Vec<Cache<T>>>,
) -> Result<Act<T>> {
    for node in nodes {
        let (y, cache) = node.forward(params, x, tape.is_some())?;
        if let (Some(t), Some(c)) = (tape.as_deref_mut(), cache) {
            t.push(c);
        }
        x = y;
    }
    Ok(x)
}

/// Backward over a node sequence. Returns `dx` unless `need_dx` is false and
/// the first node can skip it.
pub fn backward_seq<T: Real>(
    nodes: &[Node],
    params: &Params<T>,
    tape: Vec<Cache<T>>,
    mut dy: Act<T>,
    grads: &mut Grads<T>,
    need_dx: bool,
) -> Result<Option<Act<T>>> {
    debug_assert_eq!(nodes.len(), tape.len());
    for (i, (node, cache)) in nodes.iter().zip(tape).enumerate().rev() {
        let need = need_dx || i > 0;
        match node.backward(params, cache, dy, grads, need)? {
            Some(d) => dy = d,
            None => return Ok(None),
        }
    }
    Ok(Some(dy))
}

impl Node {
    pub fn forward<T: Real>(
        &self,
        params: &Params<T>,
        mut x: Act<T>,
        train: bool,
    ) -> Result<(Act<T>, Option<Cache<T>>)> {
        match self {
            Node::Conv(c) => conv_forward(c, params, x, train),
            Node::Factorized { spatial, temporal } => {
                let (mid, c1) = conv_forward(spatial, params, x, train)?;
                let (y, c2) = conv_forward(temporal, params, mid, train)?;
                let cache = match (c1, c2) {
                    (Some(a), Some(b)) => Some(Cache::Factorized { spatial: Box::new(a), temporal: Box::new(b) }),
                    _ => None,
                };
                Ok((y, cache))
            }
            Node::BatchNorm(bn) => {
                if x.dims[0] != bn.channels {
                    return Err(Error::Shape(format!("{}: channel mismatch", bn.name)));
                }
                let y = kernels::batchnorm_forward(
                    &x.data,
                    bn.channels,
                    params.get(bn.gamma),
                    params.get(bn.beta),
                    params.get(bn.mean),
                    params.get(bn.var),
                    T::from_f64c(bn.eps),
                );
                let dims = x.dims;
                let cache = train.then_some(Cache::BatchNorm { x: x.data });
                Ok((Act::new(y, dims), cache))
            }
            Node::Relu => {
                kernels::relu_inplace(&mut x.data);
                let cache = train.then(|| Cache::Relu { y: x.data.clone() });
                Ok((x, cache))
            }
            Node::MaxPool(g) | Node::TemporalMaxPool(g) => {
                let (y, argmax, out) = kernels::maxpool3d_forward(g, &x.data, x.dims[0], x.thw())?;
                let cache = train.then_some(Cache::Pool { argmax, input_len: x.data.len(), input_dims: x.dims });
                Ok((Act::new(y, [x.dims[0], out[0], out[1], out[2]]), cache))
            }
            Node::TemporalShift(s) => {
                if x.dims[0] != s.channels {
                    return Err(Error::Shape("temporal shift: channel mismatch".into()));
                }
                let y = kernels::temporal_shift_forward(&x.data, x.dims, s.fold());
                Ok((Act::new(y, x.dims), train.then_some(Cache::Shift { dims: x.dims })))
            }
            Node::TemporalAggregation(a) => {
                if x.dims[0] != a.channels {
                    return Err(Error::Shape(format!("{}: channel mismatch", a.name)));
                }
                let y = kernels::temporal_depthwise_forward(&x.data, x.dims, params.get(a.weight));
                let dims = x.dims;
                Ok((Act::new(y, dims), train.then_some(Cache::Aggregation { x: x.data, dims })))
            }
            Node::NonLocal(nl) => nonlocal_forward(nl, params, x, train),
            Node::Residual(r) => {
                let mut body_tape = Vec::new();
                let mut short_tape = Vec::new();
                let body = forward_seq(&r.body, params, x.clone(), train.then_some(&mut body_tape))?;
                let short = if r.shortcut.is_empty() {
                    x
                } else {
                    forward_seq(&r.shortcut, params, x, train.then_some(&mut short_tape))?
                };
                if body.dims != short.dims {
                    return Err(Error::Shape(format!(
                        "{}: body {:?} vs shortcut {:?}",
                        r.name, body.dims, short.dims
                    )));
                }
                let mut y = body;
                for (a, &b) in y.data.iter_mut().zip(&short.data) {
                    *a += b;
                }
                kernels::relu_inplace(&mut y.data);
                let cache = train.then(|| Cache::Residual {
                    body: body_tape,
                    shortcut: short_tape,
                    y: y.data.clone(),
                    dims: y.dims,
                });
                Ok((y, cache))
            }
            Node::Branches(b) => {
                let mut outs = Vec::with_capacity(b.branches.len());
                let mut tapes = Vec::new();
                for branch in &b.branches {
                    let mut tape = Vec::new();
                    outs.push(forward_seq(branch, params, x.clone(), train.then_some(&mut tape))?);
                    tapes.push(tape);
                }
                let thw = [outs[0].dims[1], outs[0].dims[2], outs[0].dims[3]];
                if outs.iter().any(|o| o.dims[1..] != thw) {
                    return Err(Error::Shape(format!("{}: branch extents differ", b.name)));
                }
                let channels: Vec<usize> = outs.iter().map(|o| o.dims[0]).collect();
                let total: usize = channels.iter().sum();
                let mut data = Vec::with_capacity(total * thw.iter().product::<usize>());
                for o in outs {
                    data.extend(o.data);
                }
                let out_dims = [total, thw[0], thw[1], thw[2]];
                let cache = train.then_some(Cache::Branches { branches: tapes, channels, out_dims });
                Ok((Act::new(data, out_dims), cache))
            }
        }
    }

    pub fn backward<T: Real>(
        &self,
        params: &Params<T>,
        cache: Cache<T>,
        mut dy: Act<T>,
        grads: &mut Grads<T>,
        need_dx: bool,
    ) -> Result<Option<Act<T>>> {
        match (self, cache) {
            (Node::Conv(c), Cache::Conv { x, dims }) => {
                let dx = conv_backward(c, params, &x, dims, &dy.data, grads, need_dx)?;
                Ok(dx.map(|d| Act::new(d, [c.geom.c_in, dims[0], dims[1], dims[2]])))
            }
            (Node::Factorized { spatial, temporal }, Cache::Factorized { spatial: cs, temporal: ct }) => {
                let (Cache::Conv { x: xt, dims: dt }, Cache::Conv { x: xs, dims: ds }) = (*ct, *cs) else {
                    return Err(Error::Invalid("factorized cache mismatch".into()));
                };
                let dmid = conv_backward(temporal, params, &xt, dt, &dy.data, grads, true)?.unwrap();
                let dx = conv_backward(spatial, params, &xs, ds, &dmid, grads, need_dx)?;
                Ok(dx.map(|d| Act::new(d, [spatial.geom.c_in, ds[0], ds[1], ds[2]])))
            }
            (Node::BatchNorm(bn), Cache::BatchNorm { x }) => {
                let mut dg = core::mem::take(&mut grads.slots[bn.gamma.0]);
                let mut db = core::mem::take(&mut grads.slots[bn.beta.0]);
                let mut sg = vec![T::zero(); bn.channels];
                let mut sb = vec![T::zero(); bn.channels];
                let dx = kernels::batchnorm_backward(
                    &x,
                    bn.channels,
                    params.get(bn.gamma),
                    params.get(bn.mean),
                    params.get(bn.var),
                    T::from_f64c(bn.eps),
                    &dy.data,
                    if dg.is_empty() { &mut sg } else { &mut dg },
                    if db.is_empty() { &mut sb } else { &mut db },
                );
                grads.slots[bn.gamma.0] = dg;
                grads.slots[bn.beta.0] = db;
                Ok(Some(Act::new(dx, dy.dims)))
            }
            (Node::Relu, Cache::Relu { y }) => {
                kernels::relu_backward_inplace(&y, &mut dy.data);
                Ok(Some(dy))
            }
            (Node::MaxPool(_) | Node::TemporalMaxPool(_), Cache::Pool { argmax, input_len, input_dims }) => {
                Ok(Some(Act::new(kernels::maxpool3d_backward(&argmax, &dy.data, input_len), input_dims)))
            }
            (Node::TemporalShift(s), Cache::Shift { dims }) => {
                Ok(Some(Act::new(kernels::temporal_shift_backward(&dy.data, dims, s.fold()), dims)))
            }
            (Node::TemporalAggregation(a), Cache::Aggregation { x, dims }) => {
                let mut dw = core::mem::take(&mut grads.slots[a.weight.0]);
                let mut scratch = vec![T::zero(); a.channels * 3];
                let dx = kernels::temporal_depthwise_backward(
                    &x,
                    dims,
                    params.get(a.weight),
                    &dy.data,
                    if dw.is_empty() { &mut scratch } else { &mut dw },
                );
                grads.slots[a.weight.0] = dw;
                Ok(Some(Act::new(dx, dims)))
            }
            (Node::NonLocal(nl), Cache::NonLocal(c)) => nonlocal_backward(nl, params, *c, dy, grads).map(Some),
            (Node::Residual(r), Cache::Residual { body, shortcut, y, dims }) => {
                kernels::relu_backward_inplace(&y, &mut dy.data);
                debug_assert_eq!(dy.dims, dims);
                let dshort = if r.shortcut.is_empty() {
                    dy.clone()
                } else {
                    backward_seq(&r.shortcut, params, shortcut, dy.clone(), grads, true)?.unwrap()
                };
                let mut dx = backward_seq(&r.body, params, body, dy, grads, true)?.unwrap();
                for (a, &b) in dx.data.iter_mut().zip(&dshort.data) {
                    *a += b;
                }
                Ok(Some(dx))
            }
            (Node::Branches(b), Cache::Branches { branches, channels, out_dims }) => {
                let plane = out_dims[1] * out_dims[2] * out_dims[3];
                let mut dx: Option<Act<T>> = None;
                let mut offset = 0;
                for ((branch, tape), &ch) in b.branches.iter().zip(branches).zip(&channels) {
                    let part = dy.data[offset * plane..(offset + ch) * plane].to_vec();
                    offset += ch;
                    let d = backward_seq(branch, params, tape, Act::new(part, [ch, out_dims[1], out_dims[2], out_dims[3]]), grads, true)?
                        .unwrap();
                    match dx.as_mut() {
                        None => dx = Some(d),
                        Some(acc) => acc.data.iter_mut().zip(&d.data).for_each(|(a, &v)| *a += v),
                    }
                }
                Ok(dx)
            }
            _ => Err(Error::Invalid("cache does not match node".into())),
        }
    }

    /// Output extents for a `C×T×H×W` input.
    pub fn out_dims(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let thw = [input[1], input[2], input[3]];
        match self {
            Node::Conv(c) => {
                check_channels(&c.name, c.geom.c_in, input[0])?;
                let o = c.geom.out_dims(thw)?;
                Ok([c.geom.c_out, o[0], o[1], o[2]])
            }
            Node::Factorized { spatial, temporal } => {
                let mid = Node::Conv(spatial.clone()).out_dims(input)?;
                Node::Conv(temporal.clone()).out_dims(mid)
            }
            Node::BatchNorm(bn) => {
                check_channels(&bn.name, bn.channels, input[0])?;
                Ok(input)
            }
            Node::Relu => Ok(input),
            Node::TemporalShift(s) => {
                check_channels("temporal shift", s.channels, input[0])?;
                Ok(input)
            }
            Node::TemporalAggregation(a) => {
                check_channels(&a.name, a.channels, input[0])?;
                Ok(input)
            }
            Node::NonLocal(nl) => {
                check_channels(&nl.name, nl.channels, input[0])?;
                Ok(input)
            }
            Node::MaxPool(g) | Node::TemporalMaxPool(g) => {
                let o = g.out_dims(thw)?;
                Ok([input[0], o[0], o[1], o[2]])
            }
            Node::Residual(r) => {
                let body = seq_out_dims(&r.body, input)?;
                let short = seq_out_dims(&r.shortcut, input)?;
                if body != short {
                    return Err(Error::Shape(format!("{}: body {body:?} vs shortcut {short:?}", r.name)));
                }
                Ok(body)
            }
            Node::Branches(b) => {
                let mut total = 0;
                let mut rest = None;
                for branch in &b.branches {
                    let o = seq_out_dims(branch, input)?;
                    if *rest.get_or_insert([o[1], o[2], o[3]]) != [o[1], o[2], o[3]] {
                        return Err(Error::Shape(format!("{}: branch extents differ", b.name)));
                    }
                    total += o[0];
                }
                let [t, h, w] = rest.unwrap_or(thw);
                Ok([total, t, h, w])
            }
        }
    }

    /// Multiply-accumulates of one forward pass. Pooling, normalisation,
    /// activations, shifts and additions are free.
    pub fn macs(&self, input: [usize; 4]) -> Result<u64> {
        match self {
            Node::Conv(c) => {
                let o = self.out_dims(input)?;
                Ok(o.iter().product::<usize>() as u64 * c.geom.taps() as u64)
            }
            Node::Factorized { spatial, temporal } => {
                let s = Node::Conv(spatial.clone());
                let mid = s.out_dims(input)?;
                Ok(s.macs(input)? + Node::Conv(temporal.clone()).macs(mid)?)
            }
            Node::TemporalAggregation(a) => {
                check_channels(&a.name, a.channels, input[0])?;
                Ok(input.iter().product::<usize>() as u64 * 3)
            }
            Node::NonLocal(nl) => {
                check_channels(&nl.name, nl.channels, input[0])?;
                let p = (input[1] * input[2] * input[3]) as u64;
                let (c, ci) = (nl.channels as u64, nl.inner as u64);
                // theta, phi, g projections + output projection + two P×P products.
                Ok(3 * c * ci * p + ci * c * p + 2 * p * p * ci)
            }
            Node::Residual(r) => Ok(seq_macs(&r.body, input)? + seq_macs(&r.shortcut, input)?),
            Node::Branches(b) => b.branches.iter().map(|br| seq_macs(br, input)).sum(),
            _ => {
                self.out_dims(input)?;
                Ok(0)
            }
        }
    }

    /// Pre-order walk over this node and everything nested inside it.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Node)) {
        f(self);
        match self {
            Node::Residual(r) => {
                r.body.iter().for_each(|n| n.visit(f));
                r.shortcut.iter().for_each(|n| n.visit(f));
            }
            Node::Branches(b) => b.branches.iter().flatten().for_each(|n| n.visit(f)),
            _ => {}
        }
    }
}

fn check_channels(name: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::Shape(format!("{name}: expects {expected} channels, got {found}")));
    }
    Ok(())
}

pub fn seq_out_dims(nodes: &[Node], mut dims: [usize; 4]) -> Result<[usize; 4]> {
    for n in nodes {
        dims = n.out_dims(dims)?;
    }
    Ok(dims)
}

pub fn seq_macs(nodes: &[Node], mut dims: [usize; 4]) -> Result<u64> {
    let mut total = 0;
    for n in nodes {
        total += n.macs(dims)?;
        dims = n.out_dims(dims)?;
    }
    Ok(total)
}

fn nonlocal_forward<T: Real>(
    nl: &NonLocalNode,
    params: &Params<T>,
    x: Act<T>,
    train: bool,
) -> Result<(Act<T>, Option<Cache<T>>)> {
    check_channels(&nl.name, nl.channels, x.dims[0])?;
    let dims = x.dims;
    let p = dims[1] * dims[2] * dims[3];
    let ci = nl.inner;
    let (theta, _) = conv_forward(&nl.theta, params, x.clone(), false)?;
    let (phi, _) = conv_forward(&nl.phi, params, x.clone(), false)?;
    let (g, _) = conv_forward(&nl.g, params, x.clone(), false)?;
    // scores[i, j] = Σ_c theta[c, i]·phi[c, j]
    let mut attn = vec![T::zero(); p * p];
    T::gemm(p, ci, p, T::one(), &theta.data, (1, p), &phi.data, (p, 1), T::zero(), &mut attn, (p, 1));
    for row in attn.chunks_mut(p) {
        let s = kernels::softmax(row);
        row.copy_from_slice(&s);
    }
    // mixed[c, i] = Σ_j g[c, j]·attn[i, j]
    let mut mixed = vec![T::zero(); ci * p];
    T::gemm(ci, p, p, T::one(), &g.data, (p, 1), &attn, (1, p), T::zero(), &mut mixed, (p, 1));
    let (z, _) = conv_forward(&nl.out, params, Act::new(mixed.clone(), [ci, dims[1], dims[2], dims[3]]), false)?;
    let mut y = z;
    for (a, &b) in y.data.iter_mut().zip(&x.data) {
        *a += b;
    }
    let cache = train.then(|| {
        Cache::NonLocal(Box::new(NonLocalCache {
            x: x.data,
            dims,
            theta: theta.data,
            phi: phi.data,
            g: g.data,
            attn,
            mixed,
        }))
    });
    Ok((y, cache))
}

fn nonlocal_backward<T: Real>(
    nl: &NonLocalNode,
    params: &Params<T>,
    c: NonLocalCache<T>,
    dy: Act<T>,
    grads: &mut Grads<T>,
) -> Result<Act<T>> {
    let dims = c.dims;
    let thw = [dims[1], dims[2], dims[3]];
    let p = thw.iter().product::<usize>();
    let ci = nl.inner;
    let dmixed = conv_backward(&nl.out, params, &c.mixed, thw, &dy.data, grads, true)?.unwrap();
    let mut dg = vec![T::zero(); ci * p];
    T::gemm(ci, p, p, T::one(), &dmixed, (p, 1), &c.attn, (p, 1), T::zero(), &mut dg, (p, 1));
    let mut dattn = vec![T::zero(); p * p];
    T::gemm(p, ci, p, T::one(), &dmixed, (1, p), &c.g, (p, 1), T::zero(), &mut dattn, (p, 1));
    // softmax backward, row-wise
    for (drow, arow) in dattn.chunks_mut(p).zip(c.attn.chunks(p)) {
        let dot: T = drow.iter().zip(arow).map(|(&d, &a)| d * a).sum();
        for (d, &a) in drow.iter_mut().zip(arow) {
            *d = a * (*d - dot);
        }
    }
    let mut dtheta = vec![T::zero(); ci * p];
    T::gemm(ci, p, p, T::one(), &c.phi, (p, 1), &dattn, (1, p), T::zero(), &mut dtheta, (p, 1));
    let mut dphi = vec![T::zero(); ci * p];
    T::gemm(ci, p, p, T::one(), &c.theta, (p, 1), &dattn, (p, 1), T::zero(), &mut dphi, (p, 1));
    let mut dx = dy.data;
    for (node, d) in [(&nl.theta, dtheta), (&nl.phi, dphi), (&nl.g, dg)] {
        let part = conv_backward(node, params, &c.x, thw, &d, grads, true)?.unwrap();
        dx.iter_mut().zip(&part).for_each(|(a, &b)| *a += b);
    }
    Ok(Act::new(dx, dims))
}
