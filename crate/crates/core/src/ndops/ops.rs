//! The small fixed operator set with analytic backward passes.
//!
//! There is no tape: each forward has a matching `*_backward` and callers
//! compose them in reverse order, accumulating into [`Gradients`] keyed by
//! parameter name.

use crate::error::{Error, Result};
use crate::ndops::Tensor;

/// y[i,j] = sum_k x[i,k] * w[k,j] + b[j]
pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 || w.rank() != 2 || b.rank() != 1 {
        return Err(Error::dim("affine expects x[n,in], w[in,out], b[out]"));
    }
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    let (w_in, d_out) = (w.shape()[0], w.shape()[1]);
    if d_in != w_in || b.shape()[0] != d_out {
        return Err(Error::dim(format!(
            "affine shapes disagree: x[{n},{d_in}] w[{w_in},{d_out}] b[{}]",
            b.shape()[0]
        )));
    }
    let mut y = Tensor::zeros(&[n, d_out]);
    let xd = x.data();
    let wd = w.data();
    let yd = y.data_mut();
    for i in 0..n {
        let yrow = &mut yd[i * d_out..(i + 1) * d_out];
        yrow.copy_from_slice(b.data());
        for k in 0..d_in {
            let xv = xd[i * d_in + k];
            if xv == 0.0 {
                continue;
            }
            let wrow = &wd[k * d_out..(k + 1) * d_out];
            for (yj, wj) in yrow.iter_mut().zip(wrow) {
                *yj += xv * wj;
            }
        }
    }
    Ok(y)
}

/// Gradients of `affine` w.r.t. (x, w, b) given `grad_out` of shape [n,out].
pub fn affine_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = w.shape()[1];
    if grad_out.shape() != [n, d_out] {
        return Err(Error::dim("affine_backward grad shape mismatch"));
    }
    let mut dx = Tensor::zeros(&[n, d_in]);
    let mut dw = Tensor::zeros(&[d_in, d_out]);
    let mut db = Tensor::zeros(&[d_out]);
    let xd = x.data();
    let wd = w.data();
    let gd = grad_out.data();
    {
        let dbd = db.data_mut();
        for i in 0..n {
            let grow = &gd[i * d_out..(i + 1) * d_out];
            for (a, g) in dbd.iter_mut().zip(grow) {
                *a += g;
            }
        }
    }
    {
        let dxd = dx.data_mut();
        for i in 0..n {
            let grow = &gd[i * d_out..(i + 1) * d_out];
            for k in 0..d_in {
                let wrow = &wd[k * d_out..(k + 1) * d_out];
                let mut acc = 0.0;
                for (g, wv) in grow.iter().zip(wrow) {
                    acc += g * wv;
                }
                dxd[i * d_in + k] = acc;
            }
        }
    }
    {
        let dwd = dw.data_mut();
        for i in 0..n {
            let grow = &gd[i * d_out..(i + 1) * d_out];
            for k in 0..d_in {
                let xv = xd[i * d_in + k];
                if xv == 0.0 {
                    continue;
                }
                let drow = &mut dwd[k * d_out..(k + 1) * d_out];
                for (d, g) in drow.iter_mut().zip(grow) {
                    *d += xv * g;
                }
            }
        }
    }
    Ok((dx, dw, db))
}

#[derive(Clone, Copy, Debug)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2dSpec {
    pub fn new(stride: (usize, usize), pad: (usize, usize)) -> Self {
        Conv2dSpec { stride, pad }
    }

    pub fn unit() -> Self {
        Conv2dSpec {
            stride: (1, 1),
            pad: (0, 0),
        }
    }

    fn out_dim(&self, input: usize, kernel: usize, axis: usize) -> Result<usize> {
        let (stride, pad) = if axis == 0 {
            (self.stride.0, self.pad.0)
        } else {
            (self.stride.1, self.pad.1)
        };
        let padded = input + 2 * pad;
        if kernel > padded {
            return Err(Error::dim(format!(
                "kernel {kernel} larger than padded input {padded}"
            )));
        }
        Ok((padded - kernel) / stride + 1)
    }
}

/// Range of output positions whose input index `o*stride + k - pad` lands in `[0, input)`.
#[inline]
fn valid_out_range(out_len: usize, stride: usize, k: usize, pad: usize, input: usize) -> (usize, usize) {
    // o*stride + k - pad >= 0  and  < input
    let lo = pad.saturating_sub(k).div_ceil(stride);
    let hi_excl = if input + pad > k {
        ((input + pad - k - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo.min(out_len), hi_excl)
}

/// Cross-correlation of x[C,H,W] with kernels k[F,C,kh,kw].
pub fn conv2d(x: &Tensor, k: &Tensor, spec: Conv2dSpec) -> Result<Tensor> {
    if x.rank() != 3 || k.rank() != 4 {
        return Err(Error::dim("conv2d expects x[C,H,W], k[F,C,kh,kw]"));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, kc, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    if kc != c {
        return Err(Error::dim(format!("conv2d channels disagree: x has {c}, kernel wants {kc}")));
    }
    let oh = spec.out_dim(h, kh, 0)?;
    let ow = spec.out_dim(w, kw, 1)?;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.pad;
    let mut y = Tensor::zeros(&[f, oh, ow]);
    let xd = x.data();
    let kd = k.data();
    let yd = y.data_mut();
    for fi in 0..f {
        for ci in 0..c {
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_out_range(oh, sh, ky, ph, h);
                for kx in 0..kw {
                    let kv = kd[((fi * c + ci) * kh + ky) * kw + kx];
                    if kv == 0.0 {
                        continue;
                    }
                    let (ox_lo, ox_hi) = valid_out_range(ow, sw, kx, pw, w);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * sh + ky - ph;
                        let xrow = &xd[(ci * h + iy) * w..(ci * h + iy + 1) * w];
                        let yrow = &mut yd[(fi * oh + oy) * ow..(fi * oh + oy + 1) * ow];
                        for ox in ox_lo..ox_hi {
                            let ix = ox * sw + kx - pw;
                            yrow[ox] += kv * xrow[ix];
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of `conv2d` w.r.t. (x, k).
pub fn conv2d_backward(x: &Tensor, k: &Tensor, spec: Conv2dSpec, grad_out: &Tensor) -> Result<(Tensor, Tensor)> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (f, _, kh, kw) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
    let oh = spec.out_dim(h, kh, 0)?;
    let ow = spec.out_dim(w, kw, 1)?;
    if grad_out.shape() != [f, oh, ow] {
        return Err(Error::dim("conv2d_backward grad shape mismatch"));
    }
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.pad;
    let mut dx = Tensor::zeros(&[c, h, w]);
    let mut dk = Tensor::zeros(k.shape());
    let xd = x.data();
    let kd = k.data();
    let gd = grad_out.data();
    let dxd = dx.data_mut();
    let dkd = dk.data_mut();
    for fi in 0..f {
        for ci in 0..c {
            for ky in 0..kh {
                let (oy_lo, oy_hi) = valid_out_range(oh, sh, ky, ph, h);
                for kx in 0..kw {
                    let kidx = ((fi * c + ci) * kh + ky) * kw + kx;
                    let kv = kd[kidx];
                    let (ox_lo, ox_hi) = valid_out_range(ow, sw, kx, pw, w);
                    let mut kacc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * sh + ky - ph;
                        let grow = &gd[(fi * oh + oy) * ow..(fi * oh + oy + 1) * ow];
                        let xrow = &xd[(ci * h + iy) * w..(ci * h + iy + 1) * w];
                        let dxrow = &mut dxd[(ci * h + iy) * w..(ci * h + iy + 1) * w];
                        for ox in ox_lo..ox_hi {
                            let ix = ox * sw + kx - pw;
                            let g = grow[ox];
                            kacc += g * xrow[ix];
                            dxrow[ix] += g * kv;
                        }
                    }
                    dkd[kidx] += kacc;
                }
            }
        }
    }
    Ok((dx, dk))
}

/// Add a per-channel bias to x[F,H,W].
pub fn add_channel_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 || b.rank() != 1 || b.shape()[0] != x.shape()[0] {
        return Err(Error::dim("add_channel_bias expects x[F,H,W], b[F]"));
    }
    let (f, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut y = x.clone();
    let yd = y.data_mut();
    for fi in 0..f {
        let bv = b.data()[fi];
        for v in &mut yd[fi * h * w..(fi + 1) * h * w] {
            *v += bv;
        }
    }
    Ok(y)
}

/// d(bias) for `add_channel_bias`: spatial sum per channel.
pub fn channel_bias_backward(grad_out: &Tensor) -> Tensor {
    let (f, h, w) = (grad_out.shape()[0], grad_out.shape()[1], grad_out.shape()[2]);
    let gd = grad_out.data();
    Tensor::from_fn(&[f], |fi| gd[fi * h * w..(fi + 1) * h * w].iter().sum())
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Tensor {
    assert_eq!(x.shape(), grad_out.shape());
    let mut dx = grad_out.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

/// Numerically stable softmax along `axis` (max-subtraction before exp).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::dim(format!("softmax axis {axis} out of range for rank {}", x.rank())));
    }
    let shape = x.shape().to_vec();
    let k = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut y = x.clone();
    let yd = y.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * k * inner + i;
            let mut m = f64::NEG_INFINITY;
            for j in 0..k {
                m = m.max(yd[base + j * inner]);
            }
            let mut sum = 0.0;
            for j in 0..k {
                let e = (yd[base + j * inner] - m).exp();
                yd[base + j * inner] = e;
                sum += e;
            }
            for j in 0..k {
                yd[base + j * inner] /= sum;
            }
        }
    }
    Ok(y)
}

/// Backward through softmax given its output `y` and upstream `grad_out`.
pub fn softmax_backward(y: &Tensor, grad_out: &Tensor, axis: usize) -> Result<Tensor> {
    if y.shape() != grad_out.shape() {
        return Err(Error::dim("softmax_backward shape mismatch"));
    }
    let shape = y.shape().to_vec();
    let k = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut dx = Tensor::zeros(&shape);
    let yd = y.data();
    let gd = grad_out.data();
    let dd = dx.data_mut();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * k * inner + i;
            let mut dot = 0.0;
            for j in 0..k {
                dot += yd[base + j * inner] * gd[base + j * inner];
            }
            for j in 0..k {
                let idx = base + j * inner;
                dd[idx] = yd[idx] * (gd[idx] - dot);
            }
        }
    }
    Ok(dx)
}

/// Cross-entropy of softmax(logits) against a class index.
///
/// Returns `(-log p_target, probs)`; the logits gradient is `probs - onehot`.
pub fn ce_from_logits(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    debug_assert!(target < logits.len());
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&v| (v - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[target] - m);
    let probs = exps.into_iter().map(|e| e / sum).collect();
    (loss, probs)
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        (1.0 + v.exp()).ln()
    }
}
