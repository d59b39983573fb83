//! Layer primitives and their reverse-mode derivatives.
//!
//! Every forward function is pure. Backward functions take the cached
//! forward quantities plus the output gradient, accumulate parameter
//! gradients into the supplied buffers and return the input gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::bail;
use crate::math;
use crate::Result;

use super::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[inline]
fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output columns `x` for which `x + k - pad` lands inside `0..w`.
#[inline]
fn valid_range(w: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (w + pad).saturating_sub(k).min(w);
    (lo, hi.max(lo))
}

fn check_conv(input: &Tensor, weight: &Tensor, bias: &Tensor, pad: usize) -> Result<()> {
    let [co, ci, kh, kw] = weight.shape;
    if ci != input.channels() {
        bail!(ShapeMismatch, "conv expects {ci} input channels, got {}", input.channels());
    }
    if kh != kw || pad >= kh.max(1) {
        bail!(ShapeMismatch, "conv kernel {kh}x{kw} with padding {pad} is not supported");
    }
    if bias.len() != co {
        bail!(ShapeMismatch, "conv bias has {} entries for {co} output channels", bias.len());
    }
    Ok(())
}

/// Stride-1 zero-padded convolution (cross-correlation) that keeps the
/// spatial size: `out[y][x] = b + Σ w[ky][kx] · in[y + ky - pad][x + kx - pad]`.
///
/// A 3×3 kernel uses `pad = 1`; a 2×2 kernel uses `pad = 0`, i.e. the
/// extra zero row and column sit at the bottom and right.
pub fn conv2d(input: &Tensor, weight: &Tensor, bias: &Tensor, pad: usize) -> Result<Tensor> {
    check_conv(input, weight, bias, pad)?;
    let [n, ci, h, w] = input.shape;
    let [co, _, k, _] = weight.shape;
    let mut out = Tensor::zeros([n, co, h, w]);
    for b in 0..n {
        for o in 0..co {
            let plane = out.plane_slice_mut(b, o);
            plane.iter_mut().for_each(|v| *v = bias.data[o]);
            for i in 0..ci {
                let src = input.plane_slice(b, i);
                for ky in 0..k {
                    let (y0, y1) = valid_range(h, ky, pad);
                    for kx in 0..k {
                        let wv = weight.data[((o * ci + i) * k + ky) * k + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (x0, x1) = valid_range(w, kx, pad);
                        for y in y0..y1 {
                            let sy = y + ky - pad;
                            let sx = x0 + kx - pad;
                            axpy(&mut plane[y * w + x0..y * w + x1], wv, &src[sy * w + sx..sy * w + sx + (x1 - x0)]);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`conv2d`]; accumulates into `dweight` and `dbias`.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    pad: usize,
    dout: &Tensor,
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Tensor {
    let [n, ci, h, w] = input.shape;
    let [co, _, k, _] = weight.shape;
    let mut dinput = Tensor::zeros(input.shape);
    for b in 0..n {
        for o in 0..co {
            let g = dout.plane_slice(b, o);
            dbias[o] += g.iter().sum::<f64>();
            for i in 0..ci {
                let src = input.plane_slice(b, i);
                let base = (b * ci + i) * h * w;
                for ky in 0..k {
                    let (y0, y1) = valid_range(h, ky, pad);
                    for kx in 0..k {
                        let widx = ((o * ci + i) * k + ky) * k + kx;
                        let wv = weight.data[widx];
                        let (x0, x1) = valid_range(w, kx, pad);
                        let len = x1 - x0;
                        let mut acc = 0.0;
                        for y in y0..y1 {
                            let sy = y + ky - pad;
                            let s = sy * w + x0 + kx - pad;
                            let grow = &g[y * w + x0..y * w + x1];
                            acc += dot(grow, &src[s..s + len]);
                            axpy(&mut dinput.data[base + s..base + s + len], wv, grow);
                        }
                        dweight[widx] += acc;
                    }
                }
            }
        }
    }
    dinput
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor { shape: x.shape, data: x.data.iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect(), grad: None }
}

/// Gradient of [`relu`] given its output.
pub fn relu_backward(out: &Tensor, dout: &Tensor) -> Tensor {
    let data = out.data.iter().zip(&dout.data).map(|(&o, &g)| if o > 0.0 { g } else { 0.0 }).collect();
    Tensor { shape: out.shape, data, grad: None }
}

/// Quantities kept from a train-mode batch-norm forward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Per-channel batch statistics of a train-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct BnStats {
    pub mean: Vec<f64>,
    /// Unbiased (n - 1) estimate, the one folded into running variance.
    pub var_unbiased: Vec<f64>,
}

/// Train-mode batch normalization over `(batch, height, width)` per channel.
pub fn batchnorm_train(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, BnCache, BnStats)> {
    let [n, c, _, _] = x.shape;
    if gamma.len() != c || beta.len() != c {
        bail!(ShapeMismatch, "batch norm over {c} channels got {} scales and {} shifts", gamma.len(), beta.len());
    }
    let count = n * x.plane();
    if count < 2 {
        bail!(ShapeMismatch, "train-mode batch norm needs at least 2 values per channel, got {count}");
    }
    let mut out = Tensor::zeros(x.shape);
    let mut xhat = Tensor::zeros(x.shape);
    let mut inv_std = vec![0.0; c];
    let mut stats = BnStats { mean: vec![0.0; c], var_unbiased: vec![0.0; c] };
    for ch in 0..c {
        let mean = (0..n).map(|b| x.plane_slice(b, ch).iter().sum::<f64>()).sum::<f64>() / count as f64;
        let ss: f64 = (0..n)
            .map(|b| x.plane_slice(b, ch).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>())
            .sum();
        let var = ss / count as f64;
        let is = 1.0 / math::sqrt(var + BN_EPS);
        inv_std[ch] = is;
        stats.mean[ch] = mean;
        stats.var_unbiased[ch] = ss / (count - 1) as f64;
        let (g, bt) = (gamma.data[ch], beta.data[ch]);
        for b in 0..n {
            let src = x.plane_slice(b, ch);
            let xh = xhat.plane_slice_mut(b, ch);
            for (d, s) in xh.iter_mut().zip(src) {
                *d = (s - mean) * is;
            }
            for (d, s) in out.plane_slice_mut(b, ch).iter_mut().zip(src) {
                *d = g * (s - mean) * is + bt;
            }
        }
    }
    Ok((out, BnCache { xhat, inv_std }, stats))
}

/// Eval-mode batch normalization with fixed running statistics.
pub fn batchnorm_eval(x: &Tensor, gamma: &Tensor, beta: &Tensor, mean: &[f64], var: &[f64]) -> Result<Tensor> {
    let c = x.channels();
    if gamma.len() != c || beta.len() != c || mean.len() != c || var.len() != c {
        bail!(ShapeMismatch, "batch norm parameters do not match {c} channels");
    }
    let mut out = Tensor::zeros(x.shape);
    for ch in 0..c {
        let scale = gamma.data[ch] / math::sqrt(var[ch] + BN_EPS);
        let shift = beta.data[ch] - mean[ch] * scale;
        for b in 0..x.batch() {
            for (d, s) in out.plane_slice_mut(b, ch).iter_mut().zip(x.plane_slice(b, ch)) {
                *d = s * scale + shift;
            }
        }
    }
    Ok(out)
}

/// Exponential moving average update of running statistics.
pub fn update_running_stats(running_mean: &mut [f64], running_var: &mut [f64], stats: &BnStats) {
    for ch in 0..running_mean.len() {
        running_mean[ch] = (1.0 - BN_MOMENTUM) * running_mean[ch] + BN_MOMENTUM * stats.mean[ch];
        running_var[ch] = (1.0 - BN_MOMENTUM) * running_var[ch] + BN_MOMENTUM * stats.var_unbiased[ch];
    }
}

pub fn batchnorm_backward(
    cache: &BnCache,
    gamma: &Tensor,
    dout: &Tensor,
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Tensor {
    let [n, c, _, _] = dout.shape;
    let count = (n * dout.plane()) as f64;
    let mut dx = Tensor::zeros(dout.shape);
    for ch in 0..c {
        let mut sum_dy = 0.0;
        let mut sum_dy_xhat = 0.0;
        for b in 0..n {
            let dy = dout.plane_slice(b, ch);
            sum_dy += dy.iter().sum::<f64>();
            sum_dy_xhat += dot(dy, cache.xhat.plane_slice(b, ch));
        }
        dgamma[ch] += sum_dy_xhat;
        dbeta[ch] += sum_dy;
        let k = gamma.data[ch] * cache.inv_std[ch] / count;
        for b in 0..n {
            let dy = dout.plane_slice(b, ch);
            let xh = cache.xhat.plane_slice(b, ch);
            for ((d, g), xv) in dx.plane_slice_mut(b, ch).iter_mut().zip(dy).zip(xh) {
                *d = k * (count * g - sum_dy - xv * sum_dy_xhat);
            }
        }
    }
    dx
}

/// Quantities kept from a squeeze-and-excitation forward pass.
#[derive(Debug, Clone)]
pub struct SeCache {
    pub input: Tensor,
    /// `(batch, channels)` channel means
    pub pooled: Vec<f64>,
    /// `(batch, hidden)` after the ReLU
    pub hidden: Vec<f64>,
    /// `(batch, channels)` sigmoid gates
    pub gate: Vec<f64>,
}

/// Squeeze-and-excitation weights: `gate = σ(W₂ relu(W₁ pool + b₁) + b₂)`.
#[derive(Debug, Clone, Copy)]
pub struct SeWeights<'a> {
    /// `(hidden, channels, 1, 1)`
    pub w1: &'a Tensor,
    pub b1: &'a Tensor,
    /// `(channels, hidden, 1, 1)`
    pub w2: &'a Tensor,
    pub b2: &'a Tensor,
}

impl SeWeights<'_> {
    fn check(&self, c: usize) -> Result<usize> {
        let hid = self.w1.shape[0];
        if self.w1.shape[1] != c || self.w2.shape[0] != c || self.w2.shape[1] != hid {
            bail!(ShapeMismatch, "squeeze-excitation weights do not match {c} channels");
        }
        if self.b1.len() != hid || self.b2.len() != c {
            bail!(ShapeMismatch, "squeeze-excitation biases have the wrong length");
        }
        Ok(hid)
    }
}

/// Channel gating; takes the input by value and keeps it in the cache.
pub fn se_forward(x: Tensor, p: SeWeights<'_>) -> Result<(Tensor, SeCache)> {
    let [n, c, _, _] = x.shape;
    let hid = p.check(c)?;
    let plane = x.plane() as f64;
    let mut pooled = vec![0.0; n * c];
    let mut hidden = vec![0.0; n * hid];
    let mut gate = vec![0.0; n * c];
    let mut out = Tensor::zeros(x.shape);
    for b in 0..n {
        for ch in 0..c {
            pooled[b * c + ch] = x.plane_slice(b, ch).iter().sum::<f64>() / plane;
        }
        let m = &pooled[b * c..(b + 1) * c];
        for j in 0..hid {
            let z = p.b1.data[j] + dot(&p.w1.data[j * c..(j + 1) * c], m);
            hidden[b * hid + j] = z.max(0.0);
        }
        let hv = &hidden[b * hid..(b + 1) * hid];
        for ch in 0..c {
            let s = p.b2.data[ch] + dot(&p.w2.data[ch * hid..(ch + 1) * hid], hv);
            let g = math::sigmoid(s);
            gate[b * c + ch] = g;
            for (d, v) in out.plane_slice_mut(b, ch).iter_mut().zip(x.plane_slice(b, ch)) {
                *d = v * g;
            }
        }
    }
    Ok((out, SeCache { input: x, pooled, hidden, gate }))
}

pub struct SeGrads<'a> {
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
}

pub fn se_backward(cache: &SeCache, p: SeWeights<'_>, dout: &Tensor, g: SeGrads<'_>) -> Tensor {
    let [n, c, _, _] = dout.shape;
    let hid = p.w1.shape[0];
    let plane = dout.plane() as f64;
    let mut dx = Tensor::zeros(dout.shape);
    let mut ds = vec![0.0; c];
    let mut dz = vec![0.0; hid];
    for b in 0..n {
        let hv = &cache.hidden[b * hid..(b + 1) * hid];
        for ch in 0..c {
            let gate = cache.gate[b * c + ch];
            let dgate = dot(dout.plane_slice(b, ch), cache.input.plane_slice(b, ch));
            ds[ch] = dgate * gate * (1.0 - gate);
            g.b2[ch] += ds[ch];
            axpy(&mut g.w2[ch * hid..(ch + 1) * hid], ds[ch], hv);
        }
        for j in 0..hid {
            let dh: f64 = (0..c).map(|ch| p.w2.data[ch * hid + j] * ds[ch]).sum();
            dz[j] = if hv[j] > 0.0 { dh } else { 0.0 };
            g.b1[j] += dz[j];
            axpy(&mut g.w1[j * c..(j + 1) * c], dz[j], &cache.pooled[b * c..(b + 1) * c]);
        }
        for ch in 0..c {
            let dm: f64 = (0..hid).map(|j| p.w1.data[j * c + ch] * dz[j]).sum::<f64>() / plane;
            let gate = cache.gate[b * c + ch];
            for (d, gy) in dx.plane_slice_mut(b, ch).iter_mut().zip(dout.plane_slice(b, ch)) {
                *d = gy * gate + dm;
            }
        }
    }
    dx
}

/// 2×2 max pooling with stride 2; also returns the flat input index of each
/// maximum (first in row-major window order on ties).
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = x.shape;
    if h % 2 != 0 || w % 2 != 0 {
        bail!(ShapeMismatch, "max pooling needs even spatial size, got {h}x{w}");
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut arg = vec![0usize; n * c * oh * ow];
    for p in 0..n * c {
        let base = p * h * w;
        for y in 0..oh {
            for xo in 0..ow {
                let mut best = base + 2 * y * w + 2 * xo;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let i = base + (2 * y + dy) * w + 2 * xo + dx;
                    if x.data[i] > x.data[best] {
                        best = i;
                    }
                }
                let o = p * oh * ow + y * ow + xo;
                out.data[o] = x.data[best];
                arg[o] = best;
            }
        }
    }
    Ok((out, arg))
}

pub fn maxpool2_backward(argmax: &[usize], dout: &Tensor, input_shape: [usize; 4]) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    for (&i, &g) in argmax.iter().zip(&dout.data) {
        dx.data[i] += g;
    }
    dx
}

/// Source taps for ×2 bilinear resampling with half-pixel centers: output
/// index `i` samples input coordinate `(i + ½)/2 − ½`, clamped to the edge.
fn upsample_taps(n: usize) -> Vec<(usize, usize, f64)> {
    (0..2 * n)
        .map(|i| {
            let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
            let i0 = math::floor(src) as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn upsample_bilinear2(x: &Tensor) -> Tensor {
    let [n, c, h, w] = x.shape;
    let (oh, ow) = (2 * h, 2 * w);
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut out = Tensor::zeros([n, c, oh, ow]);
    let mut tmp = vec![0.0; h * ow];
    for b in 0..n {
        for ch in 0..c {
            let src = x.plane_slice(b, ch);
            for r in 0..h {
                for (j, &(j0, j1, f)) in tx.iter().enumerate() {
                    tmp[r * ow + j] = (1.0 - f) * src[r * w + j0] + f * src[r * w + j1];
                }
            }
            let dst = out.plane_slice_mut(b, ch);
            for (i, &(i0, i1, f)) in ty.iter().enumerate() {
                for j in 0..ow {
                    dst[i * ow + j] = (1.0 - f) * tmp[i0 * ow + j] + f * tmp[i1 * ow + j];
                }
            }
        }
    }
    out
}

/// Adjoint of [`upsample_bilinear2`].
pub fn upsample_bilinear2_backward(dout: &Tensor, input_shape: [usize; 4]) -> Tensor {
    let [n, c, h, w] = input_shape;
    let ow = 2 * w;
    let ty = upsample_taps(h);
    let tx = upsample_taps(w);
    let mut dx = Tensor::zeros(input_shape);
    let mut tmp = vec![0.0; h * ow];
    for b in 0..n {
        for ch in 0..c {
            tmp.iter_mut().for_each(|v| *v = 0.0);
            let g = dout.plane_slice(b, ch);
            for (i, &(i0, i1, f)) in ty.iter().enumerate() {
                for j in 0..ow {
                    tmp[i0 * ow + j] += (1.0 - f) * g[i * ow + j];
                    tmp[i1 * ow + j] += f * g[i * ow + j];
                }
            }
            let dst = dx.plane_slice_mut(b, ch);
            for r in 0..h {
                for (j, &(j0, j1, f)) in tx.iter().enumerate() {
                    dst[r * w + j0] += (1.0 - f) * tmp[r * ow + j];
                    dst[r * w + j1] += f * tmp[r * ow + j];
                }
            }
        }
    }
    dx
}

/// ×2 bilinear upsampling followed by a 2×2 convolution.
pub fn upsample_conv2(x: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    conv2d(&upsample_bilinear2(x), weight, bias, 0)
}

/// Channel concatenation `[a, b]`.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [n, ca, h, w] = a.shape;
    if b.batch() != n || b.height() != h || b.width() != w {
        bail!(ShapeMismatch, "cannot concatenate {:?} with {:?}", a.shape, b.shape);
    }
    let cb = b.channels();
    let p = h * w;
    let mut data = Vec::with_capacity((ca + cb) * n * p);
    for s in 0..n {
        data.extend_from_slice(&a.data[s * ca * p..(s + 1) * ca * p]);
        data.extend_from_slice(&b.data[s * cb * p..(s + 1) * cb * p]);
    }
    Tensor::new([n, ca + cb, h, w], data)
}

/// Split a gradient of [`concat_channels`] back into its two parts.
pub fn split_channels(d: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let [n, c, h, w] = d.shape;
    let cb = c - ca;
    let p = h * w;
    let mut da = Vec::with_capacity(n * ca * p);
    let mut db = Vec::with_capacity(n * cb * p);
    for s in 0..n {
        let base = s * c * p;
        da.extend_from_slice(&d.data[base..base + ca * p]);
        db.extend_from_slice(&d.data[base + ca * p..base + c * p]);
    }
    (
        Tensor { shape: [n, ca, h, w], data: da, grad: None },
        Tensor { shape: [n, cb, h, w], data: db, grad: None },
    )
}

/// Mean squared difference over every value in the batch.
pub fn l2_loss(predicted: &Tensor, target: &Tensor) -> Result<f64> {
    predicted.same_shape(target)?;
    let s: f64 = predicted.data.iter().zip(&target.data).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(s / predicted.len() as f64)
}

pub fn l2_loss_grad(predicted: &Tensor, target: &Tensor) -> Result<Tensor> {
    predicted.same_shape(target)?;
    let k = 2.0 / predicted.len() as f64;
    let data = predicted.data.iter().zip(&target.data).map(|(p, t)| k * (p - t)).collect();
    Tensor::new(predicted.shape, data)
}
