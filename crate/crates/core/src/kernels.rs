//! Forward and backward kernels over single-sample activations laid out as
//! `C×T×H×W` (row-major).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;

/// Geometry of a 3D convolution; a 2D convolution is the `kernel[0] == 1`
/// case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl ConvGeom {
    /// Per-frame spatial convolution.
    pub fn spatial(c_in: usize, c_out: usize, k: usize, stride: usize, pad: usize) -> Self {
        Self { c_in, c_out, kernel: [1, k, k], stride: [1, stride, stride], pad: [0, pad, pad] }
    }

    /// Kernel-`t` convolution along time only, stride 1, "same" padding.
    pub fn temporal(c_in: usize, c_out: usize, t: usize) -> Self {
        Self { c_in, c_out, kernel: [t, 1, 1], stride: [1, 1, 1], pad: [t / 2, 0, 0] }
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        [self.c_out, self.c_in, self.kernel[0], self.kernel[1], self.kernel[2]]
    }

    /// Multiply-accumulates per output element.
    pub fn taps(&self) -> usize {
        self.c_in * self.kernel.iter().product::<usize>()
    }

    pub fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    pub fn out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.pad[a];
            if padded < self.kernel[a] {
                return Err(Error::Shape(format!(
                    "conv kernel {:?} larger than padded input {input:?}",
                    self.kernel
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

fn vol2col<T: Real>(g: &ConvGeom, x: &[T], dims: [usize; 3], out: [usize; 3], col: &mut [T]) {
    let [t, h, w] = dims;
    let [ot, oh, ow] = out;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let p = ot * oh * ow;
    let mut row = 0;
    for ci in 0..g.c_in {
        let xc = &x[ci * t * h * w..(ci + 1) * t * h * w];
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let dst = &mut col[row * p..(row + 1) * p];
                    let mut o = 0;
                    for zt in 0..ot {
                        let it = (zt * st + a) as isize - pt as isize;
                        for zh in 0..oh {
                            let ih = (zh * sh + b) as isize - ph as isize;
                            let line = &mut dst[o..o + ow];
                            o += ow;
                            if it < 0 || it >= t as isize || ih < 0 || ih >= h as isize {
                                line.fill(T::zero());
                                continue;
                            }
                            let src = &xc[(it as usize * h + ih as usize) * w..][..w];
                            for (zw, v) in line.iter_mut().enumerate() {
                                let iw = (zw * sw + c) as isize - pw as isize;
                                *v = if iw < 0 || iw >= w as isize { T::zero() } else { src[iw as usize] };
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn col2vol<T: Real>(g: &ConvGeom, col: &[T], dims: [usize; 3], out: [usize; 3], dx: &mut [T]) {
    let [t, h, w] = dims;
    let [ot, oh, ow] = out;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let p = ot * oh * ow;
    let mut row = 0;
    for ci in 0..g.c_in {
        let xc = &mut dx[ci * t * h * w..(ci + 1) * t * h * w];
        for a in 0..kt {
            for b in 0..kh {
                for c in 0..kw {
                    let src = &col[row * p..(row + 1) * p];
                    let mut o = 0;
                    for zt in 0..ot {
                        let it = (zt * st + a) as isize - pt as isize;
                        for zh in 0..oh {
                            let ih = (zh * sh + b) as isize - ph as isize;
                            let line = &src[o..o + ow];
                            o += ow;
                            if it < 0 || it >= t as isize || ih < 0 || ih >= h as isize {
                                continue;
                            }
                            let dst = &mut xc[(it as usize * h + ih as usize) * w..][..w];
                            for (zw, v) in line.iter().enumerate() {
                                let iw = (zw * sw + c) as isize - pw as isize;
                                if iw >= 0 && iw < w as isize {
                                    dst[iw as usize] += *v;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// `y = conv(x, weight) + bias`; returns `(y, output dims)`.
pub fn conv3d_forward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    dims: [usize; 3],
    weight: &[T],
    bias: Option<&[T]>,
) -> Result<(Vec<T>, [usize; 3])> {
    let out = g.out_dims(dims)?;
    let p: usize = out.iter().product();
    let k = g.taps();
    debug_assert_eq!(x.len(), g.c_in * dims.iter().product::<usize>());
    debug_assert_eq!(weight.len(), g.c_out * k);
    let mut y = vec![T::zero(); g.c_out * p];
    if g.is_pointwise() {
        T::gemm(g.c_out, k, p, T::one(), weight, (k, 1), x, (p, 1), T::zero(), &mut y, (p, 1));
    } else {
        let mut col = vec![T::zero(); k * p];
        vol2col(g, x, dims, out, &mut col);
        T::gemm(g.c_out, k, p, T::one(), weight, (k, 1), &col, (p, 1), T::zero(), &mut y, (p, 1));
    }
    if let Some(b) = bias {
        for (co, chunk) in y.chunks_mut(p).enumerate() {
            let bv = b[co];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok((y, out))
}

/// Accumulates weight/bias gradients and returns `dx` when requested.
#[allow(clippy::too_many_arguments)]
pub fn conv3d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    dims: [usize; 3],
    weight: &[T],
    dy: &[T],
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
    need_dx: bool,
) -> Result<Option<Vec<T>>> {
    let out = g.out_dims(dims)?;
    let p: usize = out.iter().product();
    let k = g.taps();
    if let Some(db) = dbias {
        for (co, chunk) in dy.chunks(p).enumerate() {
            db[co] += chunk.iter().copied().sum::<T>();
        }
    }
    let n_in = g.c_in * dims.iter().product::<usize>();
    if g.is_pointwise() {
        // dW += dy · xᵀ
        T::gemm(g.c_out, p, k, T::one(), dy, (p, 1), x, (1, p), T::one(), dweight, (k, 1));
        if !need_dx {
            return Ok(None);
        }
        let mut dx = vec![T::zero(); n_in];
        T::gemm(k, g.c_out, p, T::one(), weight, (1, k), dy, (p, 1), T::zero(), &mut dx, (p, 1));
        return Ok(Some(dx));
    }
    let mut col = vec![T::zero(); k * p];
    vol2col(g, x, dims, out, &mut col);
    T::gemm(g.c_out, p, k, T::one(), dy, (p, 1), &col, (1, p), T::one(), dweight, (k, 1));
    if !need_dx {
        return Ok(None);
    }
    // dcol = Wᵀ · dy, reusing the column buffer.
    T::gemm(k, g.c_out, p, T::one(), weight, (1, k), dy, (p, 1), T::zero(), &mut col, (p, 1));
    let mut dx = vec![T::zero(); n_in];
    col2vol(g, &col, dims, out, &mut dx);
    Ok(Some(dx))
}

/// Max pooling window over `(T, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolGeom {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    /// Round the output extent up, keeping only windows that start inside
    /// the input or its leading padding.
    pub ceil_mode: bool,
}

impl PoolGeom {
    pub fn spatial(k: usize, stride: usize, pad: usize, ceil_mode: bool) -> Self {
        Self { kernel: [1, k, k], stride: [1, stride, stride], pad: [0, pad, pad], ceil_mode }
    }

    /// Kernel 3, stride 2, padding 1 along time: `T → ⌈T/2⌉`.
    pub fn temporal() -> Self {
        Self { kernel: [3, 1, 1], stride: [2, 1, 1], pad: [1, 0, 0], ceil_mode: false }
    }

    pub fn out_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let (n, k, s, p) = (input[a], self.kernel[a], self.stride[a], self.pad[a]);
            if n + 2 * p < k {
                return Err(Error::Shape(format!(
                    "pool kernel {:?} larger than padded input {input:?}",
                    self.kernel
                )));
            }
            let span = n + 2 * p - k;
            let mut o = if self.ceil_mode { span.div_ceil(s) + 1 } else { span / s + 1 };
            if self.ceil_mode && (o - 1) * s >= n + p {
                o -= 1;
            }
            out[a] = o;
        }
        Ok(out)
    }
}

/// Max pooling; also returns, per output element, the flat input index of
/// the selected maximum.
pub fn maxpool3d_forward<T: Real>(
    g: &PoolGeom,
    x: &[T],
    channels: usize,
    dims: [usize; 3],
) -> Result<(Vec<T>, Vec<u32>, [usize; 3])> {
    let out = g.out_dims(dims)?;
    let [t, h, w] = dims;
    let [ot, oh, ow] = out;
    let vol = t * h * w;
    let ovol = ot * oh * ow;
    let mut y = Vec::with_capacity(channels * ovol);
    let mut arg = Vec::with_capacity(channels * ovol);
    for c in 0..channels {
        let base = c * vol;
        for zt in 0..ot {
            let t0 = (zt * g.stride[0]) as isize - g.pad[0] as isize;
            for zh in 0..oh {
                let h0 = (zh * g.stride[1]) as isize - g.pad[1] as isize;
                for zw in 0..ow {
                    let w0 = (zw * g.stride[2]) as isize - g.pad[2] as isize;
                    let mut best = T::neg_infinity();
                    let mut best_i = usize::MAX;
                    for a in 0..g.kernel[0] as isize {
                        let it = t0 + a;
                        if it < 0 || it >= t as isize {
                            continue;
                        }
                        for b in 0..g.kernel[1] as isize {
                            let ih = h0 + b;
                            if ih < 0 || ih >= h as isize {
                                continue;
                            }
                            for cc in 0..g.kernel[2] as isize {
                                let iw = w0 + cc;
                                if iw < 0 || iw >= w as isize {
                                    continue;
                                }
                                let i = base + (it as usize * h + ih as usize) * w + iw as usize;
                                if best_i == usize::MAX || x[i] > best {
                                    best = x[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    debug_assert!(best_i != usize::MAX, "empty pooling window");
                    y.push(best);
                    arg.push(best_i as u32);
                }
            }
        }
    }
    Ok((y, arg, out))
}

pub fn maxpool3d_backward<T: Real>(argmax: &[u32], dy: &[T], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(dy) {
        dx[i as usize] += g;
    }
    dx
}

/// Per-channel affine normalisation with fixed statistics.
pub fn batchnorm_forward<T: Real>(
    x: &[T],
    channels: usize,
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Vec<T> {
    let plane = x.len() / channels;
    let mut y = Vec::with_capacity(x.len());
    for c in 0..channels {
        let scale = gamma[c] / (var[c] + eps).sqrt();
        let shift = beta[c] - mean[c] * scale;
        y.extend(x[c * plane..(c + 1) * plane].iter().map(|&v| v * scale + shift));
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub fn batchnorm_backward<T: Real>(
    x: &[T],
    channels: usize,
    gamma: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
    dy: &[T],
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Vec<T> {
    let plane = x.len() / channels;
    let mut dx = Vec::with_capacity(x.len());
    for c in 0..channels {
        let inv = T::one() / (var[c] + eps).sqrt();
        let xs = &x[c * plane..(c + 1) * plane];
        let gs = &dy[c * plane..(c + 1) * plane];
        let mut dg = T::zero();
        let mut db = T::zero();
        for (&xv, &gv) in xs.iter().zip(gs) {
            dg += gv * (xv - mean[c]) * inv;
            db += gv;
        }
        dgamma[c] += dg;
        dbeta[c] += db;
        let scale = gamma[c] * inv;
        dx.extend(gs.iter().map(|&g| g * scale));
    }
    dx
}

pub fn relu_inplace<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero();
        }
    });
}

/// `dx = dy` where the forward output was positive.
pub fn relu_backward_inplace<T: Real>(y: &[T], dy: &mut [T]) {
    for (g, &v) in dy.iter_mut().zip(y) {
        if v <= T::zero() {
            *g = T::zero();
        }
    }
}

/// Channels moved by a temporal shift in each direction: `⌊fraction·C⌋`.
pub fn shift_fold(channels: usize, fraction: f64) -> usize {
    libm::floor(fraction * channels as f64) as usize
}

/// Temporal shift over `C×T×(H·W)`: the first `fold` channels take their
/// value from frame `t−1`, the next `fold` from frame `t+1`, the rest are
/// unchanged; vacated positions are zero.
pub fn temporal_shift_forward<T: Real>(x: &[T], dims: [usize; 4], fold: usize) -> Vec<T> {
    let [c, t, h, w] = dims;
    let plane = h * w;
    let mut y = vec![T::zero(); x.len()];
    for ch in 0..c {
        let base = ch * t * plane;
        for f in 0..t {
            let dst = base + f * plane;
            let src = if ch < fold {
                f.checked_sub(1)
            } else if ch < 2 * fold {
                (f + 1 < t).then_some(f + 1)
            } else {
                Some(f)
            };
            if let Some(s) = src {
                let s = base + s * plane;
                y[dst..dst + plane].copy_from_slice(&x[s..s + plane]);
            }
        }
    }
    y
}

pub fn temporal_shift_backward<T: Real>(dy: &[T], dims: [usize; 4], fold: usize) -> Vec<T> {
    let [c, t, h, w] = dims;
    let plane = h * w;
    let mut dx = vec![T::zero(); dy.len()];
    for ch in 0..c {
        let base = ch * t * plane;
        for f in 0..t {
            let src = if ch < fold {
                f.checked_sub(1)
            } else if ch < 2 * fold {
                (f + 1 < t).then_some(f + 1)
            } else {
                Some(f)
            };
            if let Some(s) = src {
                let d = base + s * plane;
                let g = base + f * plane;
                for i in 0..plane {
                    dx[d + i] += dy[g + i];
                }
            }
        }
    }
    dx
}

/// Depthwise 3-tap temporal aggregation over `C×T×(H·W)` with zero padding:
/// `y[c,t] = w[c,0]·x[c,t−1] + w[c,1]·x[c,t] + w[c,2]·x[c,t+1]`.
pub fn temporal_depthwise_forward<T: Real>(x: &[T], dims: [usize; 4], weight: &[T]) -> Vec<T> {
    let [c, t, h, w] = dims;
    let plane = h * w;
    let mut y = vec![T::zero(); x.len()];
    for ch in 0..c {
        let taps = &weight[ch * 3..ch * 3 + 3];
        let base = ch * t * plane;
        for f in 0..t {
            let dst = base + f * plane;
            for (k, &wk) in taps.iter().enumerate() {
                let src = f as isize + k as isize - 1;
                if src < 0 || src >= t as isize || wk == T::zero() {
                    continue;
                }
                let s = base + src as usize * plane;
                for i in 0..plane {
                    y[dst + i] += wk * x[s + i];
                }
            }
        }
    }
    y
}

pub fn temporal_depthwise_backward<T: Real>(
    x: &[T],
    dims: [usize; 4],
    weight: &[T],
    dy: &[T],
    dweight: &mut [T],
) -> Vec<T> {
    let [c, t, h, w] = dims;
    let plane = h * w;
    let mut dx = vec![T::zero(); x.len()];
    for ch in 0..c {
        let base = ch * t * plane;
        for f in 0..t {
            let g = base + f * plane;
            for k in 0..3 {
                let src = f as isize + k as isize - 1;
                if src < 0 || src >= t as isize {
                    continue;
                }
                let s = base + src as usize * plane;
                let wk = weight[ch * 3 + k];
                let mut acc = T::zero();
                for i in 0..plane {
                    acc += dy[g + i] * x[s + i];
                    dx[s + i] += wk * dy[g + i];
                }
                dweight[ch * 3 + k] += acc;
            }
        }
    }
    dx
}

/// Rows of `x` (`n×in`) through `weight` (`out×in`) plus bias: `n×out`.
pub fn linear_forward<T: Real>(
    x: &[T],
    n: usize,
    weight: &[T],
    bias: &[T],
    d_in: usize,
    d_out: usize,
) -> Vec<T> {
    let mut y = vec![T::zero(); n * d_out];
    for row in y.chunks_mut(d_out) {
        row.copy_from_slice(bias);
    }
    T::gemm(n, d_in, d_out, T::one(), x, (d_in, 1), weight, (1, d_in), T::one(), &mut y, (d_out, 1));
    y
}

#[allow(clippy::too_many_arguments)]
pub fn linear_backward<T: Real>(
    x: &[T],
    n: usize,
    weight: &[T],
    d_in: usize,
    d_out: usize,
    dy: &[T],
    dweight: &mut [T],
    dbias: &mut [T],
) -> Vec<T> {
    for row in dy.chunks(d_out) {
        for (b, &g) in dbias.iter_mut().zip(row) {
            *b += g;
        }
    }
    // dW (out×in) += dyᵀ · x
    T::gemm(d_out, n, d_in, T::one(), dy, (1, d_out), x, (d_in, 1), T::one(), dweight, (d_in, 1));
    let mut dx = vec![T::zero(); n * d_in];
    T::gemm(n, d_out, d_in, T::one(), dy, (d_out, 1), weight, (d_in, 1), T::zero(), &mut dx, (d_in, 1));
    dx
}

pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy of `logits` against `label` and its gradient.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let mut p = softmax(logits);
    // log-sum-exp form: no clamping, and NaN or infinite logits give a
    // non-finite loss
    let m = logits.iter().fold(T::neg_infinity(), |a, &b| if b > a { b } else { a });
    let lse = m + logits.iter().fold(T::zero(), |acc, &l| acc + (l - m).exp()).ln();
    let loss = lse - logits[label];
    p[label] -= T::one();
    (loss, p)
}

/// Mean of `values` that does not depend on their order: values are summed
/// in sorted order, so any permutation of the inputs gives identical bits.
pub fn order_invariant_mean<T: Real>(values: &mut [T]) -> T {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(core::cmp::Ordering::Equal));
    let mut acc = T::zero();
    for &v in values.iter() {
        acc += v;
    }
    acc / T::from_usize(values.len()).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Direct seven-loop convolution.
    fn naive_conv(g: &ConvGeom, x: &[f64], dims: [usize; 3], w: &[f64], b: &[f64]) -> Vec<f64> {
        let out = g.out_dims(dims).unwrap();
        let [t, h, wd] = dims;
        let mut y = Vec::new();
        for co in 0..g.c_out {
            for zt in 0..out[0] {
                for zh in 0..out[1] {
                    for zw in 0..out[2] {
                        let mut acc = b[co];
                        for ci in 0..g.c_in {
                            for a in 0..g.kernel[0] {
                                for bb in 0..g.kernel[1] {
                                    for c in 0..g.kernel[2] {
                                        let it = (zt * g.stride[0] + a) as isize - g.pad[0] as isize;
                                        let ih = (zh * g.stride[1] + bb) as isize - g.pad[1] as isize;
                                        let iw = (zw * g.stride[2] + c) as isize - g.pad[2] as isize;
                                        if it < 0 || ih < 0 || iw < 0 || it >= t as isize || ih >= h as isize || iw >= wd as isize {
                                            continue;
                                        }
                                        let xi = ((ci * t + it as usize) * h + ih as usize) * wd + iw as usize;
                                        let wi = (((co * g.c_in + ci) * g.kernel[0] + a) * g.kernel[1] + bb) * g.kernel[2] + c;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        y.push(acc);
                    }
                }
            }
        }
        y
    }

    fn geoms() -> Vec<(ConvGeom, [usize; 3])> {
        vec![
            (ConvGeom { c_in: 2, c_out: 3, kernel: [3, 3, 3], stride: [1, 1, 1], pad: [1, 1, 1] }, [4, 5, 6]),
            (ConvGeom { c_in: 3, c_out: 2, kernel: [1, 7, 7], stride: [1, 2, 2], pad: [0, 3, 3] }, [2, 9, 8]),
            (ConvGeom { c_in: 4, c_out: 4, kernel: [1, 1, 1], stride: [1, 1, 1], pad: [0, 0, 0] }, [3, 2, 2]),
            (ConvGeom { c_in: 2, c_out: 2, kernel: [1, 1, 1], stride: [1, 2, 2], pad: [0, 0, 0] }, [2, 5, 5]),
            (ConvGeom::temporal(3, 3, 3), [5, 2, 3]),
        ]
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (g, dims) in geoms() {
            let x = rand_vec(&mut rng, g.c_in * dims.iter().product::<usize>());
            let w = rand_vec(&mut rng, g.c_out * g.taps());
            let b = rand_vec(&mut rng, g.c_out);
            let (y, _) = conv3d_forward(&g, &x, dims, &w, Some(&b)).unwrap();
            let want = naive_conv(&g, &x, dims, &w, &b);
            for (a, e) in y.iter().zip(&want) {
                assert!((a - e).abs() < 1e-12, "{g:?}");
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (g, dims) in geoms() {
            let x = rand_vec(&mut rng, g.c_in * dims.iter().product::<usize>());
            let w = rand_vec(&mut rng, g.c_out * g.taps());
            let b = rand_vec(&mut rng, g.c_out);
            let (y, _) = conv3d_forward(&g, &x, dims, &w, Some(&b)).unwrap();
            let r = rand_vec(&mut rng, y.len());
            let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
                let (y, _) = conv3d_forward(&g, x, dims, w, Some(b)).unwrap();
                y.iter().zip(&r).map(|(a, c)| a * c).sum()
            };
            let mut dw = vec![0.0; w.len()];
            let mut db = vec![0.0; b.len()];
            let dx = conv3d_backward(&g, &x, dims, &w, &r, &mut dw, Some(&mut db), true)
                .unwrap()
                .unwrap();
            let h = 1e-6;
            for i in (0..x.len()).step_by(7) {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (loss(&xp, &w, &b) - loss(&xm, &w, &b)) / (2.0 * h);
                assert!((fd - dx[i]).abs() < 1e-6, "dx {g:?} {fd} {}", dx[i]);
            }
            for i in (0..w.len()).step_by(5) {
                let mut wp = w.clone();
                wp[i] += h;
                let mut wm = w.clone();
                wm[i] -= h;
                let fd = (loss(&x, &wp, &b) - loss(&x, &wm, &b)) / (2.0 * h);
                assert!((fd - dw[i]).abs() < 1e-6, "dw {g:?}");
            }
            for i in 0..b.len() {
                let mut bp = b.clone();
                bp[i] += h;
                let mut bm = b.clone();
                bm[i] -= h;
                let fd = (loss(&x, &w, &bp) - loss(&x, &w, &bm)) / (2.0 * h);
                assert!((fd - db[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pool_extents() {
        let g = PoolGeom::temporal();
        for (t, want) in [(8, 4), (4, 2), (2, 1), (1, 1), (7, 4), (3, 2)] {
            assert_eq!(g.out_dims([t, 5, 5]).unwrap(), [want, 5, 5]);
        }
        // ceil mode as used by the InceptionV1 stem: 112 -> 56, 7x7 -> 4x4 with k=2.
        assert_eq!(PoolGeom::spatial(3, 2, 0, true).out_dims([1, 112, 112]).unwrap(), [1, 56, 56]);
        assert_eq!(PoolGeom::spatial(2, 2, 0, true).out_dims([1, 7, 7]).unwrap(), [1, 4, 4]);
        assert_eq!(PoolGeom::spatial(3, 2, 1, false).out_dims([1, 112, 112]).unwrap(), [1, 56, 56]);
    }

    #[test]
    fn maxpool_routes_gradient_to_argmax() {
        let x = [1.0f64, 5.0, 2.0, 4.0, 3.0, 0.0];
        let g = PoolGeom::temporal();
        let (y, arg, out) = maxpool3d_forward(&g, &x, 1, [6, 1, 1]).unwrap();
        assert_eq!(out, [3, 1, 1]);
        assert_eq!(y, vec![5.0, 5.0, 4.0]);
        let dx = maxpool3d_backward(&arg, &[1.0, 1.0, 1.0], 6);
        assert_eq!(dx, vec![0.0, 2.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn batchnorm_backward_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = 3;
        let x = rand_vec(&mut rng, c * 4);
        let gamma = rand_vec(&mut rng, c);
        let beta = rand_vec(&mut rng, c);
        let mean = rand_vec(&mut rng, c);
        let var: Vec<f64> = rand_vec(&mut rng, c).iter().map(|v| v.abs() + 0.5).collect();
        let r = rand_vec(&mut rng, x.len());
        let loss = |x: &[f64], gm: &[f64], bt: &[f64]| -> f64 {
            batchnorm_forward(x, c, gm, bt, &mean, &var, 1e-5).iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let mut dg = vec![0.0; c];
        let mut db = vec![0.0; c];
        let dx = batchnorm_backward(&x, c, &gamma, &mean, &var, 1e-5, &r, &mut dg, &mut db);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            let fd = (loss(&p, &gamma, &beta) - loss(&m, &gamma, &beta)) / (2.0 * h);
            assert!((fd - dx[i]).abs() < 1e-6);
        }
        for i in 0..c {
            let mut p = gamma.clone();
            p[i] += h;
            let mut m = gamma.clone();
            m[i] -= h;
            let fd = (loss(&x, &p, &beta) - loss(&x, &m, &beta)) / (2.0 * h);
            assert!((fd - dg[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn shift_backward_is_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = [8, 4, 2, 1];
        let x = rand_vec(&mut rng, 64);
        let r = rand_vec(&mut rng, 64);
        let y = temporal_shift_forward(&x, dims, 2);
        let dx = temporal_shift_backward(&r, dims, 2);
        let lhs: f64 = y.iter().zip(&r).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&dx).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn linear_backward_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, di, dout) = (3, 4, 2);
        let x = rand_vec(&mut rng, n * di);
        let w = rand_vec(&mut rng, dout * di);
        let b = rand_vec(&mut rng, dout);
        let r = rand_vec(&mut rng, n * dout);
        let loss = |x: &[f64], w: &[f64]| -> f64 {
            linear_forward(x, n, w, &b, di, dout).iter().zip(&r).map(|(a, c)| a * c).sum()
        };
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; dout];
        let dx = linear_backward(&x, n, &w, di, dout, &r, &mut dw, &mut db);
        let h = 1e-6;
        for i in 0..x.len() {
            let mut p = x.clone();
            p[i] += h;
            let mut m = x.clone();
            m[i] -= h;
            assert!(((loss(&p, &w) - loss(&m, &w)) / (2.0 * h) - dx[i]).abs() < 1e-6);
        }
        for i in 0..w.len() {
            let mut p = w.clone();
            p[i] += h;
            let mut m = w.clone();
            m[i] -= h;
            assert!(((loss(&x, &p) - loss(&x, &m)) / (2.0 * h) - dw[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_gradient_sums_to_zero() {
        let (loss, g) = softmax_cross_entropy(&[1.0f64, 2.0, 3.0], 2);
        assert!(loss > 0.0);
        assert!(g.iter().sum::<f64>().abs() < 1e-12);
        assert!(g[2] < 0.0);
    }

    #[test]
    fn order_invariant_mean_is_bit_stable() {
        let mut a = [0.1f32, 0.7, 1e-8, 3.3, -2.0];
        let mut b = [3.3f32, 1e-8, -2.0, 0.1, 0.7];
        assert_eq!(order_invariant_mean(&mut a).to_bits(), order_invariant_mean(&mut b).to_bits());
    }
}
