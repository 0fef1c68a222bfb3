//! Raw forward and backward math for every tensor operation. The graph
//! module wires these into reverse-mode accumulation; tests drive them
//! directly against finite differences.

use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};
use crate::scalar::{s, Scalar};

fn shape4(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize, usize, usize), TensorError> {
    match t.shape() {
        [n, c, h, w] => Ok((*n, *c, *h, *w)),
        other => Err(TensorError::Shape(format!(
            "{what}: expected 4 dims, got {other:?}"
        ))),
    }
}

/// Feature maps may be (N, C, H, W) or already pooled (N, C).
fn shape_nc_spatial(
    t: &Tensor<impl Scalar>,
    what: &str,
) -> Result<(usize, usize, usize), TensorError> {
    match t.shape() {
        [n, c] => Ok((*n, *c, 1)),
        [n, c, h, w] => Ok((*n, *c, h * w)),
        other => Err(TensorError::Shape(format!(
            "{what}: expected (N, C) or (N, C, H, W), got {other:?}"
        ))),
    }
}

fn out_dim(size: usize, k: usize, stride: usize, pad: usize) -> Result<usize, TensorError> {
    let padded = size + 2 * pad;
    if padded < k || stride == 0 {
        return Err(TensorError::Shape(format!(
            "kernel {k} does not fit input {size} with padding {pad}"
        )));
    }
    Ok((padded - k) / stride + 1)
}

/// Four-accumulator dot product: deterministic lane order, vectorizes.
#[inline]
fn dot4<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        for lane in 0..4 {
            acc[lane] += a[4 * i + lane] * b[4 * i + lane];
        }
    }
    let mut tail = S::zero();
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + tail
}

/// `dst += k * src`, elementwise.
#[inline]
fn axpy<S: Scalar>(k: S, src: &[S], dst: &mut [S]) {
    for (o, &i) in dst.iter_mut().zip(src) {
        *o += i * k;
    }
}

/// C(m x n) = A(m x k) * B(k x n) + beta * C, all row-major.
fn mm_nn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        S::gemm(
            m, k, n,
            S::one(),
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// C(m x n) = A(m x k) * B(n x k)^T + beta * C.
fn mm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        S::gemm(
            m, k, n,
            S::one(),
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// C(m x n) = A(k x m)^T * B(k x n) + beta * C.
fn mm_tn<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], beta: S, c: &mut [S]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        S::gemm(
            m, k, n,
            S::one(),
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn conv_dims<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<ConvDims, TensorError> {
    let (n, cin, h, w) = shape4(x, "conv2d input")?;
    let (cout, wc, kh, kw) = shape4(weight, "conv2d kernel")?;
    if wc != cin {
        return Err(TensorError::Shape(format!(
            "kernel expects {wc} input channels, input has {cin}"
        )));
    }
    Ok(ConvDims {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh: out_dim(h, kh, stride, pad)?,
        ow: out_dim(w, kw, stride, pad)?,
    })
}

/// Column matrix layout: K = cin*kh*kw rows, M = oh*ow columns.
#[allow(clippy::too_many_arguments)]
fn im2col<S: Scalar>(
    x: &[S],
    d: &ConvDims,
    stride: usize,
    pad: usize,
    cols: &mut [S],
) {
    let m_total = d.oh * d.ow;
    cols.fill(S::zero());
    let mut k = 0usize;
    for c in 0..d.cin {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for dy in 0..d.kh {
            for dx in 0..d.kw {
                let row = &mut cols[k * m_total..(k + 1) * m_total];
                let (oy_lo, oy_hi) = valid_out_range(d.h, d.oh, stride, dy, pad);
                let (ox_lo, ox_hi) = valid_out_range(d.w, d.ow, stride, dx, pad);
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + dy - pad;
                    let in_row = &plane[iy * d.w..(iy + 1) * d.w];
                    let dst = &mut row[oy * d.ow + ox_lo..oy * d.ow + ox_hi];
                    if stride == 1 {
                        let base = ox_lo + dx - pad;
                        dst.copy_from_slice(&in_row[base..base + (ox_hi - ox_lo)]);
                    } else {
                        let src = &in_row[ox_lo * stride + dx - pad..];
                        for (o, i) in dst.iter_mut().zip(src.iter().step_by(stride)) {
                            *o = *i;
                        }
                    }
                }
                k += 1;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<S: Scalar>(
    cols: &[S],
    d: &ConvDims,
    stride: usize,
    pad: usize,
    x_grad: &mut [S],
) {
    let m_total = d.oh * d.ow;
    let mut k = 0usize;
    for c in 0..d.cin {
        let plane = &mut x_grad[c * d.h * d.w..(c + 1) * d.h * d.w];
        for dy in 0..d.kh {
            for dx in 0..d.kw {
                let row = &cols[k * m_total..(k + 1) * m_total];
                let (oy_lo, oy_hi) = valid_out_range(d.h, d.oh, stride, dy, pad);
                let (ox_lo, ox_hi) = valid_out_range(d.w, d.ow, stride, dx, pad);
                for oy in oy_lo..oy_hi {
                    let iy = oy * stride + dy - pad;
                    let dst_row = &mut plane[iy * d.w..(iy + 1) * d.w];
                    let src = &row[oy * d.ow + ox_lo..oy * d.ow + ox_hi];
                    if stride == 1 {
                        let base = ox_lo + dx - pad;
                        for (o, &i) in dst_row[base..base + src.len()].iter_mut().zip(src) {
                            *o += i;
                        }
                    } else {
                        for (ox, &i) in (ox_lo..ox_hi).zip(src) {
                            dst_row[ox * stride + dx - pad] += i;
                        }
                    }
                }
                k += 1;
            }
        }
    }
}

/// Standard cross-correlation, NCHW input and `(Cout, Cin, KH, KW)` kernel.
pub fn conv2d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>, TensorError> {
    let d = conv_dims(x, weight, stride, pad)?;
    let k_total = d.cin * d.kh * d.kw;
    let m_total = d.oh * d.ow;
    let mut y = Tensor::zeros(&[d.n, d.cout, d.oh, d.ow]);
    let pointwise = d.kh == 1 && d.kw == 1 && stride == 1 && pad == 0;
    let mut cols = if pointwise { Vec::new() } else { vec![S::zero(); k_total * m_total] };
    for n in 0..d.n {
        let x_n = &x.data()[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w];
        let y_n = &mut y.data_mut()[n * d.cout * m_total..(n + 1) * d.cout * m_total];
        if pointwise {
            // Channel-mixing loops beat a packed GEMM at these tiny K.
            for co in 0..d.cout {
                let out_row = &mut y_n[co * m_total..(co + 1) * m_total];
                for ci in 0..d.cin {
                    let wk = weight.data()[co * d.cin + ci];
                    let x_row = &x_n[ci * m_total..(ci + 1) * m_total];
                    for (o, &xv) in out_row.iter_mut().zip(x_row) {
                        *o += xv * wk;
                    }
                }
            }
        } else {
            im2col(x_n, &d, stride, pad, &mut cols);
            if m_total <= 16 {
                // Few output positions (text-encoder kernels): a packed
                // GEMM spends its time packing; plain dots win.
                for co in 0..d.cout {
                    let w_row = &weight.data()[co * k_total..(co + 1) * k_total];
                    for m in 0..m_total {
                        let mut acc = S::zero();
                        for k in 0..k_total {
                            acc += w_row[k] * cols[k * m_total + m];
                        }
                        y_n[co * m_total + m] = acc;
                    }
                }
            } else {
                mm_nn(d.cout, k_total, m_total, weight.data(), &cols, S::zero(), y_n);
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv2d`] w.r.t. input and kernel.
pub fn conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
    grad_y: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>), TensorError> {
    let d = conv_dims(x, weight, stride, pad)?;
    let k_total = d.cin * d.kh * d.kw;
    let m_total = d.oh * d.ow;
    if grad_y.shape() != [d.n, d.cout, d.oh, d.ow] {
        return Err(TensorError::Shape("conv2d_backward: grad shape mismatch".into()));
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let pointwise = d.kh == 1 && d.kw == 1 && stride == 1 && pad == 0;
    let mut cols = if pointwise { Vec::new() } else { vec![S::zero(); k_total * m_total] };
    let mut dcols = if pointwise { Vec::new() } else { vec![S::zero(); k_total * m_total] };
    for n in 0..d.n {
        let x_n = &x.data()[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w];
        let dy_n = &grad_y.data()[n * d.cout * m_total..(n + 1) * d.cout * m_total];
        if pointwise {
            let gx_n = &mut gx.data_mut()[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w];
            for co in 0..d.cout {
                let dy_row = &dy_n[co * m_total..(co + 1) * m_total];
                for ci in 0..d.cin {
                    let x_row = &x_n[ci * m_total..(ci + 1) * m_total];
                    let gx_row = &mut gx_n[ci * m_total..(ci + 1) * m_total];
                    let wk = weight.data()[co * d.cin + ci];
                    gw.data_mut()[co * d.cin + ci] += dot4(dy_row, x_row);
                    axpy(wk, dy_row, gx_row);
                }
            }
        } else {
            im2col(x_n, &d, stride, pad, &mut cols);
            if m_total <= 16 {
                let gw_data = gw.data_mut();
                for co in 0..d.cout {
                    let dy_row = &dy_n[co * m_total..(co + 1) * m_total];
                    for k in 0..k_total {
                        let mut acc = S::zero();
                        for m in 0..m_total {
                            acc += dy_row[m] * cols[k * m_total + m];
                        }
                        gw_data[co * k_total + k] += acc;
                    }
                }
                dcols.fill(S::zero());
                for co in 0..d.cout {
                    let dy_row = &dy_n[co * m_total..(co + 1) * m_total];
                    let w_row = &weight.data()[co * k_total..(co + 1) * k_total];
                    for k in 0..k_total {
                        axpy(w_row[k], dy_row, &mut dcols[k * m_total..(k + 1) * m_total]);
                    }
                }
            } else {
                mm_nt(d.cout, m_total, k_total, dy_n, &cols, S::one(), gw.data_mut());
                mm_tn(k_total, d.cout, m_total, weight.data(), dy_n, S::zero(), &mut dcols);
            }
            let gx_n = &mut gx.data_mut()[n * d.cin * d.h * d.w..(n + 1) * d.cin * d.h * d.w];
            col2im_add(&dcols, &d, stride, pad, gx_n);
        }
    }
    Ok((gx, gw))
}

/// Per-channel spatial convolution with a `(C, KH, KW)` kernel.
pub fn depthwise_conv2d<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>, TensorError> {
    let (n_batch, c, h, w) = shape4(x, "depthwise input")?;
    let (wc, kh, kw) = match weight.shape() {
        [wc, kh, kw] => (*wc, *kh, *kw),
        other => {
            return Err(TensorError::Shape(format!(
                "depthwise kernel: expected (C, KH, KW), got {other:?}"
            )))
        }
    };
    if wc != c {
        return Err(TensorError::Shape(format!(
            "depthwise kernel has {wc} channels, input has {c}"
        )));
    }
    let oh = out_dim(h, kh, stride, pad)?;
    let ow = out_dim(w, kw, stride, pad)?;
    let mut y = Tensor::zeros(&[n_batch, c, oh, ow]);
    let ydata = y.data_mut();
    for n in 0..n_batch {
        for ch in 0..c {
            let plane = &x.data()[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
            let kernel = &weight.data()[ch * kh * kw..(ch + 1) * kh * kw];
            let out = &mut ydata[(n * c + ch) * oh * ow..(n * c + ch + 1) * oh * ow];
            // Kernel-position-outer accumulation: the inner loop runs over
            // a precomputed in-bounds output range and vectorizes.
            for ky in 0..kh {
                for kx in 0..kw {
                    let wk = kernel[ky * kw + kx];
                    let (oy_lo, oy_hi) = valid_out_range(h, oh, stride, ky, pad);
                    let (ox_lo, ox_hi) = valid_out_range(w, ow, stride, kx, pad);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let in_row = &plane[iy * w..(iy + 1) * w];
                        let out_row = &mut out[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let base = ox_lo + kx - pad;
                            let src = &in_row[base..base + (ox_hi - ox_lo)];
                            for (o, &i) in out_row[ox_lo..ox_hi].iter_mut().zip(src) {
                                *o += i * wk;
                            }
                        } else {
                            let src = &in_row[ox_lo * stride + kx - pad..];
                            for (o, i) in out_row[ox_lo..ox_hi]
                                .iter_mut()
                                .zip(src.iter().step_by(stride))
                            {
                                *o += *i * wk;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Output index range for which `o * stride + k - pad` lands inside
/// `0..size`.
fn valid_out_range(size: usize, out: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k).div_ceil(stride);
    let hi = ((size + pad).saturating_sub(k)).div_ceil(stride).min(out);
    (lo.min(hi), hi)
}

pub fn depthwise_conv2d_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
    grad_y: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>), TensorError> {
    let (n_batch, c, h, w) = shape4(x, "depthwise input")?;
    let (_, kh, kw) = match weight.shape() {
        [wc, kh, kw] => (*wc, *kh, *kw),
        _ => return Err(TensorError::Shape("depthwise kernel shape".into())),
    };
    let oh = out_dim(h, kh, stride, pad)?;
    let ow = out_dim(w, kw, stride, pad)?;
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let gx_data = gx.data_mut();
    let gw_data = gw.data_mut();
    for n in 0..n_batch {
        for ch in 0..c {
            let plane = &x.data()[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
            let kernel = &weight.data()[ch * kh * kw..(ch + 1) * kh * kw];
            let dy = &grad_y.data()[(n * c + ch) * oh * ow..(n * c + ch + 1) * oh * ow];
            let gx_plane = &mut gx_data[(n * c + ch) * h * w..(n * c + ch + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wk = kernel[ky * kw + kx];
                    let mut wsum = S::zero();
                    let (oy_lo, oy_hi) = valid_out_range(h, oh, stride, ky, pad);
                    let (ox_lo, ox_hi) = valid_out_range(w, ow, stride, kx, pad);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * stride + ky - pad;
                        let in_row = &plane[iy * w..(iy + 1) * w];
                        let gx_row = &mut gx_plane[iy * w..(iy + 1) * w];
                        let dy_row = &dy[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            let base = ox_lo + kx - pad;
                            let n_cols = ox_hi - ox_lo;
                            let src = &in_row[base..base + n_cols];
                            let dst = &mut gx_row[base..base + n_cols];
                            let dy_slice = &dy_row[ox_lo..ox_hi];
                            wsum += dot4(dy_slice, src);
                            axpy(wk, dy_slice, dst);
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * stride + kx - pad;
                                let g = dy_row[ox];
                                wsum += g * in_row[ix];
                                gx_row[ix] += g * wk;
                            }
                        }
                    }
                    gw_data[ch * kh * kw + ky * kw + kx] += wsum;
                }
            }
        }
    }
    Ok((gx, gw))
}

/// Depthwise separable convolution: per-channel spatial conv with "same"
/// padding (`kh / 2`) followed by a 1x1 pointwise channel mix.
pub fn depthwise_separable_conv2d<S: Scalar>(
    x: &Tensor<S>,
    depth: &Tensor<S>,
    point: &Tensor<S>,
    stride: usize,
) -> Result<Tensor<S>, TensorError> {
    let pad = match depth.shape() {
        [_, kh, _] => kh / 2,
        _ => 0,
    };
    let mid = depthwise_conv2d(x, depth, stride, pad)?;
    conv2d(&mid, point, 1, 0)
}

/// Running batch-norm statistics with biased variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct RunningStats<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> RunningStats<S> {
    pub fn new(channels: usize) -> RunningStats<S> {
        RunningStats {
            mean: vec![S::zero(); channels],
            var: vec![S::one(); channels],
        }
    }

    /// `momentum` is the retained fraction of the old running value.
    pub fn update(&mut self, mean: &[S], var: &[S], momentum: f64) {
        let keep = s::<S>(momentum);
        let take = S::one() - keep;
        for c in 0..self.mean.len() {
            self.mean[c] = self.mean[c] * keep + mean[c] * take;
            self.var[c] = self.var[c] * keep + var[c] * take;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

pub struct BnSaved<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
    pub inv_std: Vec<S>,
    pub xhat: Tensor<S>,
}

/// Train-mode batch normalization over the batch and spatial axes.
pub fn batch_norm_train<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    eps: f64,
) -> Result<(Tensor<S>, BnSaved<S>), TensorError> {
    let (n, c, sp) = shape_nc_spatial(x, "batch_norm input")?;
    if gamma.numel() != c || beta.numel() != c {
        return Err(TensorError::Shape("batch_norm: gamma/beta must be per-channel".into()));
    }
    if n == 0 {
        return Err(TensorError::InvalidInput("batch_norm: zero batch in train mode".into()));
    }
    let count = s::<S>((n * sp) as f64);
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    for bi in 0..n {
        for ch in 0..c {
            let row = &x.data()[(bi * c + ch) * sp..(bi * c + ch + 1) * sp];
            let mut acc = S::zero();
            for &v in row {
                acc += v;
            }
            mean[ch] += acc;
        }
    }
    for m in mean.iter_mut() {
        *m /= count;
    }
    for bi in 0..n {
        for ch in 0..c {
            let row = &x.data()[(bi * c + ch) * sp..(bi * c + ch + 1) * sp];
            let m = mean[ch];
            let mut acc = S::zero();
            for &v in row {
                let d = v - m;
                acc += d * d;
            }
            var[ch] += acc;
        }
    }
    for v in var.iter_mut() {
        *v /= count;
    }
    let inv_std: Vec<S> = var.iter().map(|&v| (v + s::<S>(eps)).sqrt().recip()).collect();

    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for bi in 0..n {
        for ch in 0..c {
            let range = (bi * c + ch) * sp..(bi * c + ch + 1) * sp;
            let (g, b, m, istd) = (gamma.data()[ch], beta.data()[ch], mean[ch], inv_std[ch]);
            let x_row = &x.data()[range.clone()];
            for ((&xv, xh), yv) in x_row
                .iter()
                .zip(xhat.data_mut()[range.clone()].iter_mut())
                .zip(y.data_mut()[range].iter_mut())
            {
                let hv = (xv - m) * istd;
                *xh = hv;
                *yv = g * hv + b;
            }
        }
    }
    Ok((
        y,
        BnSaved {
            mean,
            var,
            inv_std,
            xhat,
        },
    ))
}

pub fn batch_norm_train_backward<S: Scalar>(
    saved: &BnSaved<S>,
    gamma: &Tensor<S>,
    grad_y: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>), TensorError> {
    let (n, c, sp) = shape_nc_spatial(&saved.xhat, "batch_norm grad")?;
    let count = s::<S>((n * sp) as f64);
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for bi in 0..n {
        for ch in 0..c {
            let range = (bi * c + ch) * sp..(bi * c + ch + 1) * sp;
            let mut dg = S::zero();
            let mut db = S::zero();
            for (&g, &xh) in grad_y.data()[range.clone()].iter().zip(&saved.xhat.data()[range]) {
                dg += g * xh;
                db += g;
            }
            dgamma.data_mut()[ch] += dg;
            dbeta.data_mut()[ch] += db;
        }
    }
    let mut dx = Tensor::zeros(saved.xhat.shape());
    for bi in 0..n {
        for ch in 0..c {
            let range = (bi * c + ch) * sp..(bi * c + ch + 1) * sp;
            let scale = gamma.data()[ch] * saved.inv_std[ch] / count;
            let (dg, db) = (dgamma.data()[ch], dbeta.data()[ch]);
            for ((&g, &xh), o) in grad_y.data()[range.clone()]
                .iter()
                .zip(&saved.xhat.data()[range.clone()])
                .zip(dx.data_mut()[range].iter_mut())
            {
                *o = scale * (count * g - db - xh * dg);
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

pub fn batch_norm_eval<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    mean: &[S],
    var: &[S],
    eps: f64,
) -> Result<Tensor<S>, TensorError> {
    let (n, c, sp) = shape_nc_spatial(x, "batch_norm input")?;
    if gamma.numel() != c || beta.numel() != c || mean.len() != c || var.len() != c {
        return Err(TensorError::Shape("batch_norm: per-channel shapes".into()));
    }
    let mut y = Tensor::zeros(x.shape());
    for bi in 0..n {
        for ch in 0..c {
            let inv = (var[ch] + s::<S>(eps)).sqrt().recip();
            let range = (bi * c + ch) * sp..(bi * c + ch + 1) * sp;
            let (g, b, m) = (gamma.data()[ch], beta.data()[ch], mean[ch]);
            for (&xv, yv) in x.data()[range.clone()].iter().zip(y.data_mut()[range].iter_mut()) {
                *yv = g * (xv - m) * inv + b;
            }
        }
    }
    Ok(y)
}

/// Gradients in eval mode, where mean and var are constants.
pub fn batch_norm_eval_backward<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    mean: &[S],
    var: &[S],
    eps: f64,
    grad_y: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>), TensorError> {
    let (n, c, sp) = shape_nc_spatial(x, "batch_norm grad")?;
    let mut dx = Tensor::zeros(x.shape());
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    for bi in 0..n {
        for ch in 0..c {
            let inv = (var[ch] + s::<S>(eps)).sqrt().recip();
            let base = (bi * c + ch) * sp;
            for i in 0..sp {
                let g = grad_y.data()[base + i];
                let xhat = (x.data()[base + i] - mean[ch]) * inv;
                dx.data_mut()[base + i] = g * gamma.data()[ch] * inv;
                dgamma.data_mut()[ch] += g * xhat;
                dbeta.data_mut()[ch] += g;
            }
        }
    }
    Ok((dx, dgamma, dbeta))
}

/// Spec-facing batch norm: train mode normalizes by batch statistics and
/// folds them into the running stats; eval mode reads the running stats.
pub fn batch_norm<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
    running: &mut RunningStats<S>,
    mode: BnMode,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<S>, TensorError> {
    match mode {
        BnMode::Train => {
            let (y, saved) = batch_norm_train(x, gamma, beta, eps)?;
            running.update(&saved.mean, &saved.var, momentum);
            Ok(y)
        }
        BnMode::Eval => batch_norm_eval(x, gamma, beta, &running.mean, &running.var, eps),
    }
}

pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v > S::zero() { v } else { S::zero() })
}

pub fn relu_backward<S: Scalar>(x: &Tensor<S>, grad_y: &Tensor<S>) -> Tensor<S> {
    let mut g = grad_y.clone();
    for (gi, &xi) in g.data_mut().iter_mut().zip(x.data()) {
        if xi <= S::zero() {
            *gi = S::zero();
        }
    }
    g
}

pub fn add<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape(format!(
            "add: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    for (o, &bi) in out.data_mut().iter_mut().zip(b.data()) {
        *o += bi;
    }
    Ok(out)
}

pub fn mul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    if a.shape() != b.shape() {
        return Err(TensorError::Shape(format!(
            "mul: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.clone();
    for (o, &bi) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= bi;
    }
    Ok(out)
}

/// Adds a per-channel bias to an (N, C, ...) map.
pub fn add_channel_bias<S: Scalar>(x: &Tensor<S>, bias: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    let (n, c, sp) = shape_nc_spatial(x, "add_channel_bias input")?;
    if bias.numel() != c {
        return Err(TensorError::Shape("bias must be per-channel".into()));
    }
    let mut y = x.clone();
    for bi in 0..n {
        for ch in 0..c {
            let base = (bi * c + ch) * sp;
            for i in 0..sp {
                y.data_mut()[base + i] += bias.data()[ch];
            }
        }
    }
    Ok(y)
}

pub fn add_channel_bias_backward<S: Scalar>(
    x_shape: &[usize],
    grad_y: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>), TensorError> {
    let (n, c, sp) = shape_nc_spatial(grad_y, "add_channel_bias grad")?;
    let _ = x_shape;
    let mut db = Tensor::zeros(&[c]);
    for bi in 0..n {
        for ch in 0..c {
            let base = (bi * c + ch) * sp;
            for i in 0..sp {
                db.data_mut()[ch] += grad_y.data()[base + i];
            }
        }
    }
    Ok((grad_y.clone(), db))
}

/// (N, C, H, W) -> (N, C) mean over the spatial axes.
pub fn global_avg_pool<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    let (n, c, h, w) = shape4(x, "global_avg_pool input")?;
    let sp = h * w;
    let inv = s::<S>(1.0 / sp as f64);
    let mut y = Tensor::zeros(&[n, c]);
    for bi in 0..n {
        for ch in 0..c {
            let base = (bi * c + ch) * sp;
            let mut acc = S::zero();
            for i in 0..sp {
                acc += x.data()[base + i];
            }
            y.data_mut()[bi * c + ch] = acc * inv;
        }
    }
    Ok(y)
}

pub fn global_avg_pool_backward<S: Scalar>(
    x_shape: &[usize],
    grad_y: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    let (n, c, h, w) = match x_shape {
        [n, c, h, w] => (*n, *c, *h, *w),
        _ => return Err(TensorError::Shape("global_avg_pool grad shape".into())),
    };
    let sp = h * w;
    let inv = s::<S>(1.0 / sp as f64);
    let mut gx = Tensor::zeros(x_shape);
    for bi in 0..n {
        for ch in 0..c {
            let g = grad_y.data()[bi * c + ch] * inv;
            let base = (bi * c + ch) * sp;
            for i in 0..sp {
                gx.data_mut()[base + i] = g;
            }
        }
    }
    Ok(gx)
}

/// Affine map y = x W + b with x (N, F), W (F, O), b (O).
pub fn linear<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    let (n, f) = match x.shape() {
        [n, f] => (*n, *f),
        other => return Err(TensorError::Shape(format!("linear input: {other:?}"))),
    };
    let (wf, o) = match weight.shape() {
        [wf, o] => (*wf, *o),
        other => return Err(TensorError::Shape(format!("linear weight: {other:?}"))),
    };
    if wf != f || bias.numel() != o {
        return Err(TensorError::Shape("linear: dimension mismatch".into()));
    }
    let mut y = Tensor::zeros(&[n, o]);
    mm_nn(n, f, o, x.data(), weight.data(), S::zero(), y.data_mut());
    for bi in 0..n {
        for oi in 0..o {
            y.data_mut()[bi * o + oi] += bias.data()[oi];
        }
    }
    Ok(y)
}

pub fn linear_backward<S: Scalar>(
    x: &Tensor<S>,
    weight: &Tensor<S>,
    grad_y: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>), TensorError> {
    let (n, f) = match x.shape() {
        [n, f] => (*n, *f),
        _ => return Err(TensorError::Shape("linear input".into())),
    };
    let o = weight.shape()[1];
    let mut gx = Tensor::zeros(&[n, f]);
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[o]);
    mm_nt(n, o, f, grad_y.data(), weight.data(), S::zero(), gx.data_mut());
    mm_tn(f, n, o, x.data(), grad_y.data(), S::zero(), gw.data_mut());
    for bi in 0..n {
        for oi in 0..o {
            gb.data_mut()[oi] += grad_y.data()[bi * o + oi];
        }
    }
    Ok((gx, gw, gb))
}

pub struct CosSaved<S> {
    pub norm_a: Vec<S>,
    pub norm_b: Vec<S>,
    pub cos: Vec<S>,
}

/// Row-wise cosine similarity of two (N, D) matrices.
pub fn cosine_rows<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<(Tensor<S>, CosSaved<S>), TensorError> {
    if a.shape() != b.shape() || a.shape().len() != 2 {
        return Err(TensorError::Shape(format!(
            "cosine_rows: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n, d) = (a.shape()[0], a.shape()[1]);
    let mut out = Tensor::zeros(&[n]);
    let mut saved = CosSaved {
        norm_a: vec![S::zero(); n],
        norm_b: vec![S::zero(); n],
        cos: vec![S::zero(); n],
    };
    for i in 0..n {
        let ra = &a.data()[i * d..(i + 1) * d];
        let rb = &b.data()[i * d..(i + 1) * d];
        let mut dot = S::zero();
        let mut na = S::zero();
        let mut nb = S::zero();
        for j in 0..d {
            dot += ra[j] * rb[j];
            na += ra[j] * ra[j];
            nb += rb[j] * rb[j];
        }
        let na = na.sqrt();
        let nb = nb.sqrt();
        if na.to_f64() < 1e-30 || nb.to_f64() < 1e-30 {
            return Err(TensorError::DegenerateInput(format!(
                "cosine of a zero vector (row {i})"
            )));
        }
        let c = dot / (na * nb);
        out.data_mut()[i] = c;
        saved.norm_a[i] = na;
        saved.norm_b[i] = nb;
        saved.cos[i] = c;
    }
    Ok((out, saved))
}

pub fn cosine_rows_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    saved: &CosSaved<S>,
    grad_y: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let (n, d) = (a.shape()[0], a.shape()[1]);
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    for i in 0..n {
        let g = grad_y.data()[i];
        let (na, nb, cos) = (saved.norm_a[i], saved.norm_b[i], saved.cos[i]);
        for j in 0..d {
            let av = a.data()[i * d + j];
            let bv = b.data()[i * d + j];
            ga.data_mut()[i * d + j] = g * (bv / (na * nb) - cos * av / (na * na));
            gb.data_mut()[i * d + j] = g * (av / (na * nb) - cos * bv / (nb * nb));
        }
    }
    (ga, gb)
}

pub fn sum_all<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut acc = S::zero();
    for &v in x.data() {
        acc += v;
    }
    Tensor::scalar(acc)
}

/// Clamp margin keeping compressed similarities inside the log domain.
pub const SIM_CLAMP: f64 = 1.0 - 1e-7;

/// Binary cross entropy over linearly compressed cosine similarities:
/// `-sum_i [y ln((yh+1)/2) + (1-y) ln(1-(yh+1)/2)]` with `yh` clamped to
/// the open interval (-1, 1).
pub fn bce_compress_loss<S: Scalar>(
    y_hat: &Tensor<S>,
    labels: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    if y_hat.shape() != labels.shape() {
        return Err(TensorError::Shape("bce: labels shape mismatch".into()));
    }
    let clamp = s::<S>(SIM_CLAMP);
    let half = s::<S>(0.5);
    let mut loss = S::zero();
    for (&yh, &y) in y_hat.data().iter().zip(labels.data()) {
        let t = yh.min(clamp).max(-clamp);
        let c = t * half + half;
        loss -= y * c.ln() + (S::one() - y) * (S::one() - c).ln();
    }
    Ok(Tensor::scalar(loss))
}

pub fn bce_compress_loss_backward<S: Scalar>(
    y_hat: &Tensor<S>,
    labels: &Tensor<S>,
    grad: S,
) -> Tensor<S> {
    let clamp = s::<S>(SIM_CLAMP);
    let half = s::<S>(0.5);
    let mut g = Tensor::zeros(y_hat.shape());
    for i in 0..y_hat.numel() {
        let yh = y_hat.data()[i];
        if yh > clamp || yh < -clamp {
            continue;
        }
        let y = labels.data()[i];
        let c = yh * half + half;
        g.data_mut()[i] = grad * (-y / c + (S::one() - y) / (S::one() - c)) * half;
    }
    g
}

/// Gathers rows of an embedding table: `(V, D)` and `rows` -> `(R, D)`.
pub fn embed_rows<S: Scalar>(table: &Tensor<S>, rows: &[usize]) -> Result<Tensor<S>, TensorError> {
    let (v, d) = match table.shape() {
        [v, d] => (*v, *d),
        other => return Err(TensorError::Shape(format!("embedding table: {other:?}"))),
    };
    let mut out = Tensor::zeros(&[rows.len(), d]);
    for (i, &r) in rows.iter().enumerate() {
        if r >= v {
            return Err(TensorError::Shape(format!("row {r} out of table ({v})")));
        }
        out.data_mut()[i * d..(i + 1) * d].copy_from_slice(&table.data()[r * d..(r + 1) * d]);
    }
    Ok(out)
}

pub fn embed_rows_backward<S: Scalar>(
    table_shape: &[usize],
    rows: &[usize],
    grad_y: &Tensor<S>,
) -> Tensor<S> {
    let d = table_shape[1];
    let mut gt = Tensor::zeros(table_shape);
    for (i, &r) in rows.iter().enumerate() {
        for j in 0..d {
            gt.data_mut()[r * d + j] += grad_y.data()[i * d + j];
        }
    }
    gt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::check::finite_diff_check;
    use crate::tensor::graph::{Graph, Var};
    use crate::util::stream_rng;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::rand_uniform(shape, 0.8, &mut stream_rng(seed, 0))
    }

    #[test]
    fn pointwise_identity_kernel_is_identity() {
        let x = rand_t(&[2, 3, 4, 4], 1);
        // One 1x1 kernel per channel forming the identity channel mix.
        let mut w = Tensor::<f64>::zeros(&[3, 3, 1, 1]);
        for c in 0..3 {
            w.data_mut()[c * 3 + c] = 1.0;
        }
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), x.shape());
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn ones_kernel_on_ones_input_sums_the_window() {
        let x = Tensor::<f64>::full(&[1, 1, 5, 5], 1.0);
        let w = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        for &v in y.data() {
            assert!((v - 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_output_size_follows_the_floor_formula() {
        let x = Tensor::<f64>::zeros(&[1, 2, 7, 9]);
        let w = Tensor::<f64>::zeros(&[4, 2, 3, 3]);
        let y = conv2d(&x, &w, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 4, 5]);
        assert!(conv2d(&x, &Tensor::<f64>::zeros(&[4, 3, 3, 3]), 1, 0).is_err());
    }

    #[test]
    fn conv2d_gradient_matches_finite_differences() {
        let x = rand_t(&[2, 3, 5, 5], 2);
        let w = rand_t(&[4, 3, 3, 3], 3);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let y = g.conv2d(vars[0], vars[1], 2, 1)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum_all(sq))
        };
        let report = finite_diff_check(&f, &[x, w], 1e-5, None, 0).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn depthwise_separable_equals_two_step_composition() {
        let x = rand_t(&[2, 4, 6, 6], 4);
        let depth = rand_t(&[4, 3, 3], 5);
        let point = rand_t(&[8, 4, 1, 1], 6);
        let fused = depthwise_separable_conv2d(&x, &depth, &point, 2).unwrap();

        // Independent route: per-channel conv through the generic conv2d
        // with single-channel tensors, then the pointwise mix.
        let (n, c, h, w) = (2, 4, 6, 6);
        let oh = out_dim(h, 3, 2, 1).unwrap();
        let ow = out_dim(w, 3, 2, 1).unwrap();
        let mut mid = Tensor::<f64>::zeros(&[n, c, oh, ow]);
        for ch in 0..c {
            let mut xc = Tensor::<f64>::zeros(&[n, 1, h, w]);
            for bi in 0..n {
                let src = &x.data()[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w];
                xc.data_mut()[bi * h * w..(bi + 1) * h * w].copy_from_slice(src);
            }
            let wc = Tensor::<f64>::from_vec(
                &[1, 1, 3, 3],
                depth.data()[ch * 9..(ch + 1) * 9].to_vec(),
            )
            .unwrap();
            let yc = conv2d(&xc, &wc, 2, 1).unwrap();
            for bi in 0..n {
                let dst = &mut mid.data_mut()[(bi * c + ch) * oh * ow..(bi * c + ch + 1) * oh * ow];
                dst.copy_from_slice(&yc.data()[bi * oh * ow..(bi + 1) * oh * ow]);
            }
        }
        let composed = conv2d(&mid, &point, 1, 0).unwrap();
        assert_eq!(fused.shape(), composed.shape());
        let max_diff = fused
            .data()
            .iter()
            .zip(composed.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "max diff {max_diff}");
    }

    #[test]
    fn depthwise_separable_parameter_count() {
        let depth = Tensor::<f64>::zeros(&[8, 3, 3]);
        let point = Tensor::<f64>::zeros(&[16, 8, 1, 1]);
        assert_eq!(depth.numel() + point.numel(), 8 * 9 + 8 * 16);
        assert_eq!(depth.numel() + point.numel(), 200);
        let dense = Tensor::<f64>::zeros(&[16, 8, 3, 3]);
        assert_eq!(dense.numel(), 1152);
    }

    #[test]
    fn depthwise_separable_gradient_matches_finite_differences() {
        let x = rand_t(&[1, 3, 6, 6], 7);
        let depth = rand_t(&[3, 3, 3], 8);
        let point = rand_t(&[5, 3, 1, 1], 9);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let y = g.dw_separable_conv2d(vars[0], vars[1], vars[2], 2)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum_all(sq))
        };
        let report = finite_diff_check(&f, &[x, depth, point], 1e-5, None, 1).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn train_mode_batch_norm_standardizes_each_channel() {
        let x = rand_t(&[4, 3, 5, 5], 10);
        let gamma = Tensor::<f64>::full(&[3], 1.0);
        let beta = Tensor::<f64>::zeros(&[3]);
        let (y, _) = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap();
        let (n, c, sp) = (4, 3, 25);
        for ch in 0..c {
            let mut mean = 0.0;
            let mut var = 0.0;
            for bi in 0..n {
                for i in 0..sp {
                    mean += y.data()[(bi * c + ch) * sp + i];
                }
            }
            mean /= (n * sp) as f64;
            for bi in 0..n {
                for i in 0..sp {
                    let d = y.data()[(bi * c + ch) * sp + i] - mean;
                    var += d * d;
                }
            }
            var /= (n * sp) as f64;
            assert!(mean.abs() < 1e-6, "channel {ch} mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "channel {ch} var {var}");
        }
    }

    #[test]
    fn eval_mode_with_unit_stats_is_identity() {
        let x = rand_t(&[2, 3, 4, 4], 11);
        let gamma = Tensor::<f64>::full(&[3], 1.0);
        let beta = Tensor::<f64>::zeros(&[3]);
        let mut running = RunningStats::new(3);
        let y = batch_norm(&x, &gamma, &beta, &mut running, BnMode::Eval, 0.9, 0.0).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn train_mode_updates_running_stats_with_momentum() {
        let x = rand_t(&[4, 2, 3, 3], 12);
        let gamma = Tensor::<f64>::full(&[2], 1.0);
        let beta = Tensor::<f64>::zeros(&[2]);
        let mut running = RunningStats::new(2);
        let (_, saved) = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap();
        batch_norm(&x, &gamma, &beta, &mut running, BnMode::Train, 0.9, 1e-5).unwrap();
        for ch in 0..2 {
            let want = 0.9 * 0.0 + 0.1 * saved.mean[ch];
            assert!((running.mean[ch] - want).abs() < 1e-12);
            let want_var = 0.9 * 1.0 + 0.1 * saved.var[ch];
            assert!((running.var[ch] - want_var).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_batch_in_train_mode_is_invalid() {
        let x = Tensor::<f64>::zeros(&[0, 3, 2, 2]);
        let gamma = Tensor::<f64>::full(&[3], 1.0);
        let beta = Tensor::<f64>::zeros(&[3]);
        assert!(matches!(
            batch_norm_train(&x, &gamma, &beta, 1e-5),
            Err(TensorError::InvalidInput(_))
        ));
    }

    #[test]
    fn batch_norm_gradient_matches_finite_differences() {
        let x = rand_t(&[3, 2, 4, 4], 13);
        let gamma = rand_t(&[2], 14).map(|v| v + 1.5);
        let beta = rand_t(&[2], 15);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let (y, _) = g.batch_norm_train(vars[0], vars[1], vars[2], 1e-5)?;
            let sq = g.mul(y, y)?;
            Ok(g.sum_all(sq))
        };
        let report = finite_diff_check(&f, &[x, gamma, beta], 1e-5, None, 2).unwrap();
        // Batch statistics couple every element, which limits what central
        // differences can resolve; the BN tolerance is 1e-4 by contract.
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn relu_and_pool_basics() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 1, 2], vec![-1.0, 2.0]).unwrap();
        let y = relu(&x);
        assert_eq!(y.data(), &[0.0, 2.0]);
        let c = Tensor::<f64>::full(&[2, 3, 4, 4], 2.5);
        let pooled = global_avg_pool(&c).unwrap();
        assert_eq!(pooled.shape(), &[2, 3]);
        for &v in pooled.data() {
            assert!((v - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_and_head_gradients_match_finite_differences() {
        // relu (at inputs away from the kink), add, pool, linear, bias.
        let x = rand_t(&[2, 3, 4, 4], 16).map(|v| v + 2.0 * v.signum());
        let b = rand_t(&[3], 17);
        let w = rand_t(&[3, 5], 18);
        let wb = rand_t(&[5], 19);
        let other = rand_t(&[2, 3, 4, 4], 20);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let biased = g.add_channel_bias(vars[0], vars[1])?;
            let summed = g.add(biased, vars[4])?;
            let act = g.relu(summed);
            let pooled = g.global_avg_pool(act)?;
            let out = g.linear(pooled, vars[2], vars[3])?;
            let sq = g.mul(out, out)?;
            Ok(g.sum_all(sq))
        };
        let report = finite_diff_check(&f, &[x, b, w, wb, other], 1e-5, None, 3).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn cosine_corner_values() {
        let a = Tensor::<f64>::from_vec(&[1, 2], vec![3.0, 4.0]).unwrap();
        let (c, _) = cosine_rows(&a, &a).unwrap();
        assert!((c.data()[0] - 1.0).abs() < 1e-12);

        let x = Tensor::<f64>::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let y = Tensor::<f64>::from_vec(&[1, 2], vec![0.0, 1.0]).unwrap();
        let (c, _) = cosine_rows(&x, &y).unwrap();
        assert!(c.data()[0].abs() < 1e-12);

        let neg = a.map(|v| -v);
        let (c, _) = cosine_rows(&a, &neg).unwrap();
        assert!((c.data()[0] + 1.0).abs() < 1e-12);

        let zero = Tensor::<f64>::zeros(&[1, 2]);
        assert!(matches!(
            cosine_rows(&a, &zero),
            Err(TensorError::DegenerateInput(_))
        ));
    }

    #[test]
    fn cosine_gradient_matches_finite_differences() {
        let a = rand_t(&[3, 6], 21).map(|v| v + 0.5);
        let b = rand_t(&[3, 6], 22).map(|v| v - 0.5);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let c = g.cosine_rows(vars[0], vars[1])?;
            let sq = g.mul(c, c)?;
            Ok(g.sum_all(sq))
        };
        let report = finite_diff_check(&f, &[a, b], 1e-5, None, 4).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn bce_of_indifferent_similarity_is_ln_two() {
        let yh = Tensor::<f64>::zeros(&[1]);
        let y = Tensor::<f64>::full(&[1], 1.0);
        let loss = bce_compress_loss(&yh, &y).unwrap();
        assert!((loss.item() - std::f64::consts::LN_2).abs() < 1e-12);

        // Perfect similarity under a positive label drives the loss to 0.
        let yh = Tensor::<f64>::full(&[1], 0.999_999);
        let loss = bce_compress_loss(&yh, &y).unwrap();
        assert!(loss.item() < 1e-5, "{}", loss.item());
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let yh = Tensor::<f64>::from_vec(&[4], vec![-0.7, -0.2, 0.3, 0.8]).unwrap();
        let labels = Tensor::<f64>::from_vec(&[4], vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let f = move |g: &mut Graph<f64>, vars: &[Var]| {
            g.bce_compress_loss(vars[0], labels.clone())
        };
        let report = finite_diff_check(&f, &[yh], 1e-6, None, 5).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn embedding_gathers_and_scatters() {
        let table = rand_t(&[5, 4], 23);
        let rows = vec![1usize, 3, 1];
        let out = embed_rows(&table, &rows).unwrap();
        assert_eq!(out.shape(), &[3, 4]);
        assert_eq!(&out.data()[0..4], &table.data()[4..8]);

        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let e = g.embed_rows(vars[0], vec![1, 3, 1])?;
            let sq = g.mul(e, e)?;
            Ok(g.sum_all(sq))
        };
        let report = finite_diff_check(&f, &[table], 1e-5, None, 6).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }

    #[test]
    fn shared_variable_gradients_accumulate() {
        // d/dx sum((x + x) * x) = 4x.
        let x = Tensor::<f64>::from_vec(&[2], vec![1.5, -2.0]).unwrap();
        let mut g = Graph::new();
        let v = g.leaf(x.clone());
        let doubled = g.add(v, v).unwrap();
        let prod = g.mul(doubled, v).unwrap();
        let loss = g.sum_all(prod);
        g.backward(loss).unwrap();
        let grad = g.grad(v).unwrap();
        for (gi, xi) in grad.data().iter().zip(x.data()) {
            assert!((gi - 4.0 * xi).abs() < 1e-12);
        }
    }
}
