//! Forward and vector-Jacobian kernels over raw row-major buffers.
//!
//! Every forward kernel accumulates each output element as
//! `bias + Σ_c Σ_k w·x` with channels outermost, skipping zero-padding taps.
//! Nested-loop oracles that follow the same order reproduce the outputs
//! bit for bit.

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Norms below this are treated as zero vectors by the cosine kernel.
pub const COSINE_DEGENERATE_NORM: f64 = 1e-12;
/// Added to each norm in the cosine denominator.
pub const COSINE_EPS: f64 = 1e-8;
/// Student probabilities are clamped from below inside the KL logarithm.
pub const KL_PROB_FLOOR: f64 = 1e-12;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.rank() != rank {
        return Err(TensorError::shape(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
}

// ── fully connected ──────────────────────────────────────────────────

pub fn fc_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    const OP: &str = "fully_connected";
    expect_rank(OP, x, 2)?;
    expect_rank(OP, w, 2)?;
    expect_rank(OP, b, 1)?;
    let (batch, n_in) = (x.shape()[0], x.shape()[1]);
    let n_out = w.shape()[1];
    if w.shape()[0] != n_in || b.shape()[0] != n_out {
        return Err(TensorError::shape(
            OP,
            format!(
                "input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            ),
        ));
    }
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; batch * n_out];
    for (r, row) in out.chunks_exact_mut(n_out).enumerate() {
        row.copy_from_slice(b.data());
        for i in 0..n_in {
            let xv = xd[r * n_in + i];
            if xv != 0.0 {
                axpy(xv, &wd[i * n_out..(i + 1) * n_out], row);
            }
        }
    }
    Tensor::new(vec![batch, n_out], out)
}

/// Returns gradients for (input, weight, bias); entries are `None` when not requested.
pub fn fc_backward(
    x: &Tensor,
    w: &Tensor,
    g: &Tensor,
    need: [bool; 3],
) -> [Option<Tensor>; 3] {
    let (batch, n_in) = (x.shape()[0], x.shape()[1]);
    let n_out = w.shape()[1];
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let gx = need[0].then(|| {
        let mut gx = vec![0.0; batch * n_in];
        for r in 0..batch {
            let grow = &gd[r * n_out..(r + 1) * n_out];
            for i in 0..n_in {
                gx[r * n_in + i] = dot(grow, &wd[i * n_out..(i + 1) * n_out]);
            }
        }
        Tensor::new(x.shape().to_vec(), gx).unwrap()
    });
    let gw = need[1].then(|| {
        let mut gw = vec![0.0; n_in * n_out];
        for r in 0..batch {
            let grow = &gd[r * n_out..(r + 1) * n_out];
            for i in 0..n_in {
                let xv = xd[r * n_in + i];
                if xv != 0.0 {
                    axpy(xv, grow, &mut gw[i * n_out..(i + 1) * n_out]);
                }
            }
        }
        Tensor::new(w.shape().to_vec(), gw).unwrap()
    });
    let gb = need[2].then(|| {
        let mut gb = vec![0.0; n_out];
        for grow in gd.chunks_exact(n_out) {
            axpy(1.0, grow, &mut gb);
        }
        Tensor::new(vec![n_out], gb).unwrap()
    });
    [gx, gw, gb]
}

// ── 1-D convolution, stride 1, zero "same" padding ───────────────────

struct Conv1dDims {
    batch: usize,
    chans: usize,
    len: usize,
    filters: usize,
    kernel: usize,
    pad: usize,
}

fn conv1d_dims(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Conv1dDims> {
    const OP: &str = "conv1d_same";
    expect_rank(OP, x, 3)?;
    expect_rank(OP, k, 3)?;
    expect_rank(OP, b, 1)?;
    let (batch, chans, len) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (filters, kc, kernel) = (k.shape()[0], k.shape()[1], k.shape()[2]);
    if kernel % 2 == 0 {
        return Err(TensorError::config(
            OP,
            format!("kernel size {kernel} is even; same padding needs an odd kernel"),
        ));
    }
    if kc != chans || b.shape()[0] != filters {
        return Err(TensorError::shape(
            OP,
            format!(
                "input {:?}, kernels {:?}, bias {:?}",
                x.shape(),
                k.shape(),
                b.shape()
            ),
        ));
    }
    Ok(Conv1dDims {
        batch,
        chans,
        len,
        filters,
        kernel,
        pad: (kernel - 1) / 2,
    })
}

/// Output positions `t` for which `t + shift` lies inside `[0, len)`,
/// together with the matching source start `lo + shift`.
#[inline]
fn valid_range(len: usize, shift: isize) -> Option<(usize, usize, usize)> {
    let lo = (-shift).max(0);
    let hi = (len as isize - shift).min(len as isize);
    (lo < hi).then(|| (lo as usize, hi as usize, (lo + shift) as usize))
}

pub fn conv1d_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = conv1d_dims(x, k, b)?;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0; d.batch * d.filters * d.len];
    for bi in 0..d.batch {
        for f in 0..d.filters {
            let orow = &mut out[(bi * d.filters + f) * d.len..][..d.len];
            orow.fill(b.data()[f]);
            for c in 0..d.chans {
                let xrow = &xd[(bi * d.chans + c) * d.len..][..d.len];
                let wrow = &kd[(f * d.chans + c) * d.kernel..][..d.kernel];
                for (kk, &w) in wrow.iter().enumerate() {
                    let shift = kk as isize - d.pad as isize;
                    if let Some((lo, hi, src)) = valid_range(d.len, shift) {
                        axpy(w, &xrow[src..src + hi - lo], &mut orow[lo..hi]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.batch, d.filters, d.len], out)
}

pub fn conv1d_backward(
    x: &Tensor,
    k: &Tensor,
    b: &Tensor,
    g: &Tensor,
    need: [bool; 3],
) -> [Option<Tensor>; 3] {
    let d = conv1d_dims(x, k, b).expect("validated in forward");
    let (xd, kd, gd) = (x.data(), k.data(), g.data());
    let gx = need[0].then(|| {
        let mut gx = vec![0.0; xd.len()];
        for bi in 0..d.batch {
            for f in 0..d.filters {
                let grow = &gd[(bi * d.filters + f) * d.len..][..d.len];
                for c in 0..d.chans {
                    let gxrow = &mut gx[(bi * d.chans + c) * d.len..][..d.len];
                    let wrow = &kd[(f * d.chans + c) * d.kernel..][..d.kernel];
                    for (kk, &w) in wrow.iter().enumerate() {
                        let shift = kk as isize - d.pad as isize;
                        if let Some((lo, hi, src)) = valid_range(d.len, shift) {
                            axpy(w, &grow[lo..hi], &mut gxrow[src..src + hi - lo]);
                        }
                    }
                }
            }
        }
        Tensor::new(x.shape().to_vec(), gx).unwrap()
    });
    let gk = need[1].then(|| {
        let mut gk = vec![0.0; kd.len()];
        for bi in 0..d.batch {
            for f in 0..d.filters {
                let grow = &gd[(bi * d.filters + f) * d.len..][..d.len];
                for c in 0..d.chans {
                    let xrow = &xd[(bi * d.chans + c) * d.len..][..d.len];
                    for kk in 0..d.kernel {
                        let shift = kk as isize - d.pad as isize;
                        if let Some((lo, hi, src)) = valid_range(d.len, shift) {
                            gk[(f * d.chans + c) * d.kernel + kk] +=
                                dot(&grow[lo..hi], &xrow[src..src + hi - lo]);
                        }
                    }
                }
            }
        }
        Tensor::new(k.shape().to_vec(), gk).unwrap()
    });
    let gb = need[2].then(|| {
        let mut gb = vec![0.0; d.filters];
        for (i, grow) in gd.chunks_exact(d.len).enumerate() {
            gb[i % d.filters] += grow.iter().sum::<f64>();
        }
        Tensor::new(vec![d.filters], gb).unwrap()
    });
    [gx, gk, gb]
}

// ── 2-D convolution, zero "same" padding then stride ─────────────────

struct Conv2dDims {
    batch: usize,
    chans: usize,
    h: usize,
    w: usize,
    filters: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    stride: usize,
    oh: usize,
    ow: usize,
}

fn conv2d_dims(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize) -> Result<Conv2dDims> {
    const OP: &str = "conv2d_same";
    expect_rank(OP, x, 4)?;
    expect_rank(OP, k, 4)?;
    expect_rank(OP, b, 1)?;
    let s = x.shape();
    let ks = k.shape();
    if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
        return Err(TensorError::config(
            OP,
            format!("kernel {}x{} has an even extent", ks[2], ks[3]),
        ));
    }
    if stride == 0 {
        return Err(TensorError::config(OP, "stride must be positive"));
    }
    if ks[1] != s[1] || b.shape()[0] != ks[0] {
        return Err(TensorError::shape(
            OP,
            format!("input {s:?}, kernels {ks:?}, bias {:?}", b.shape()),
        ));
    }
    let (ph, pw) = ((ks[2] - 1) / 2, (ks[3] - 1) / 2);
    if stride > s[2] + 2 * ph || stride > s[3] + 2 * pw {
        return Err(TensorError::shape(
            OP,
            format!(
                "stride {stride} exceeds padded extent {}x{}",
                s[2] + 2 * ph,
                s[3] + 2 * pw
            ),
        ));
    }
    Ok(Conv2dDims {
        batch: s[0],
        chans: s[1],
        h: s[2],
        w: s[3],
        filters: ks[0],
        kh: ks[2],
        kw: ks[3],
        ph,
        pw,
        stride,
        oh: (s[2] + 2 * ph - ks[2]) / stride + 1,
        ow: (s[3] + 2 * pw - ks[3]) / stride + 1,
    })
}

/// Calls `f(out_index, in_index)` for every valid tap of kernel offset
/// `(ky, kx)` in output-row-major order.
#[inline]
fn for_each_tap(d: &Conv2dDims, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
    for oy in 0..d.oh {
        let iy = (oy * d.stride + ky) as isize - d.ph as isize;
        if iy < 0 || iy >= d.h as isize {
            continue;
        }
        for ox in 0..d.ow {
            let ix = (ox * d.stride + kx) as isize - d.pw as isize;
            if ix < 0 || ix >= d.w as isize {
                continue;
            }
            f(oy * d.ow + ox, iy as usize * d.w + ix as usize);
        }
    }
}

pub fn conv2d_forward(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize) -> Result<Tensor> {
    let d = conv2d_dims(x, k, b, stride)?;
    let (xd, kd) = (x.data(), k.data());
    let (plane_in, plane_out) = (d.h * d.w, d.oh * d.ow);
    let mut out = vec![0.0; d.batch * d.filters * plane_out];
    for bi in 0..d.batch {
        for f in 0..d.filters {
            let oplane = &mut out[(bi * d.filters + f) * plane_out..][..plane_out];
            oplane.fill(b.data()[f]);
            for c in 0..d.chans {
                let xplane = &xd[(bi * d.chans + c) * plane_in..][..plane_in];
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let w = kd[((f * d.chans + c) * d.kh + ky) * d.kw + kx];
                        for_each_tap(&d, ky, kx, |o, i| oplane[o] += w * xplane[i]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![d.batch, d.filters, d.oh, d.ow], out)
}

pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    b: &Tensor,
    stride: usize,
    g: &Tensor,
    need: [bool; 3],
) -> [Option<Tensor>; 3] {
    let d = conv2d_dims(x, k, b, stride).expect("validated in forward");
    let (xd, kd, gd) = (x.data(), k.data(), g.data());
    let (plane_in, plane_out) = (d.h * d.w, d.oh * d.ow);
    let mut gx = need[0].then(|| vec![0.0; xd.len()]);
    let mut gk = need[1].then(|| vec![0.0; kd.len()]);
    for bi in 0..d.batch {
        for f in 0..d.filters {
            let gplane = &gd[(bi * d.filters + f) * plane_out..][..plane_out];
            for c in 0..d.chans {
                let xoff = (bi * d.chans + c) * plane_in;
                for ky in 0..d.kh {
                    for kx in 0..d.kw {
                        let widx = ((f * d.chans + c) * d.kh + ky) * d.kw + kx;
                        if let Some(gx) = gx.as_mut() {
                            let w = kd[widx];
                            let gxplane = &mut gx[xoff..xoff + plane_in];
                            for_each_tap(&d, ky, kx, |o, i| gxplane[i] += w * gplane[o]);
                        }
                        if let Some(gk) = gk.as_mut() {
                            let xplane = &xd[xoff..xoff + plane_in];
                            let mut acc = 0.0;
                            for_each_tap(&d, ky, kx, |o, i| acc += gplane[o] * xplane[i]);
                            gk[widx] += acc;
                        }
                    }
                }
            }
        }
    }
    let gb = need[2].then(|| {
        let mut gb = vec![0.0; d.filters];
        for (i, gplane) in gd.chunks_exact(plane_out).enumerate() {
            gb[i % d.filters] += gplane.iter().sum::<f64>();
        }
        Tensor::new(vec![d.filters], gb).unwrap()
    });
    [
        gx.map(|v| Tensor::new(x.shape().to_vec(), v).unwrap()),
        gk.map(|v| Tensor::new(k.shape().to_vec(), v).unwrap()),
        gb,
    ]
}

// ── pooling ──────────────────────────────────────────────────────────

/// Non-overlapping ceil-mode max pooling along the last axis of `B×C×L`.
/// Returns the pooled tensor and, per output element, the flat input index
/// of the first maximal element in its window.
pub fn maxpool1d_forward(x: &Tensor, factor: usize) -> Result<(Tensor, Vec<usize>)> {
    const OP: &str = "maxpool1d";
    expect_rank(OP, x, 3)?;
    if factor == 0 {
        return Err(TensorError::config(OP, "pooling factor must be at least 1"));
    }
    let len = x.shape()[2];
    let out_len = len.div_ceil(factor);
    let rows = x.shape()[0] * x.shape()[1];
    let mut out = Vec::with_capacity(rows * out_len);
    let mut arg = Vec::with_capacity(rows * out_len);
    for (r, row) in x.data().chunks_exact(len).enumerate() {
        for o in 0..out_len {
            let start = o * factor;
            let end = (start + factor).min(len);
            let mut best = start;
            for i in start + 1..end {
                if row[i] > row[best] {
                    best = i;
                }
            }
            out.push(row[best]);
            arg.push(r * len + best);
        }
    }
    let t = Tensor::new(vec![x.shape()[0], x.shape()[1], out_len], out)?;
    Ok((t, arg))
}

/// Floor-mode max pooling over `window × window` patches of `B×C×H×W`
/// moved by `stride` (overlapping when `stride < window`).
pub fn maxpool2d_forward(
    x: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    const OP: &str = "maxpool2d";
    expect_rank(OP, x, 4)?;
    if window == 0 || stride == 0 {
        return Err(TensorError::config(OP, "window and stride must be positive"));
    }
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    if h < window || w < window {
        return Err(TensorError::shape(
            OP,
            format!("window {window} larger than {h}x{w} input"),
        ));
    }
    let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
    let planes = s[0] * s[1];
    let mut out = Vec::with_capacity(planes * oh * ow);
    let mut arg = Vec::with_capacity(planes * oh * ow);
    for (p, plane) in x.data().chunks_exact(h * w).enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = oy * stride * w + ox * stride;
                for dy in 0..window {
                    for dx in 0..window {
                        let i = (oy * stride + dy) * w + ox * stride + dx;
                        if plane[i] > plane[best] {
                            best = i;
                        }
                    }
                }
                out.push(plane[best]);
                arg.push(p * h * w + best);
            }
        }
    }
    let t = Tensor::new(vec![s[0], s[1], oh, ow], out)?;
    Ok((t, arg))
}

/// Routes each output gradient to its recorded argmax input position.
pub fn pool_backward(input_shape: &[usize], argmax: &[usize], g: &Tensor) -> Tensor {
    let mut gx = Tensor::zeros(input_shape);
    let gxd = gx.data_mut();
    for (&src, &gv) in argmax.iter().zip(g.data()) {
        gxd[src] += gv;
    }
    gx
}

// ── activations ──────────────────────────────────────────────────────

pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

pub fn relu_backward(x: &Tensor, g: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

/// Row-wise softmax over the last axis of a `B×N` tensor.
pub fn softmax_forward(x: &Tensor) -> Result<Tensor> {
    expect_rank("softmax", x, 2)?;
    let n = x.shape()[1];
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks_exact(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let z: f64 = out[start..].iter().sum();
        for v in &mut out[start..] {
            *v /= z;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn softmax_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let n = y.shape()[1];
    let mut gx = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks_exact(n).zip(g.data().chunks_exact(n)) {
        let inner = dot(yr, gr);
        gx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - inner)));
    }
    Tensor::new(y.shape().to_vec(), gx).unwrap()
}

// ── cosine similarity ────────────────────────────────────────────────

/// Row-wise cosine of two `B×D` tensors. Returns the `B` similarities and
/// the per-row `(‖a‖, ‖b‖)` pairs.
pub fn cosine_forward(a: &Tensor, b: &Tensor) -> Result<(Tensor, Vec<(f64, f64)>)> {
    const OP: &str = "cosine_similarity";
    expect_rank(OP, a, 2)?;
    if a.shape() != b.shape() {
        return Err(TensorError::shape(
            OP,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    let rows = a.shape()[0];
    let mut out = Vec::with_capacity(rows);
    let mut norms = Vec::with_capacity(rows);
    for r in 0..rows {
        let (ar, br) = (a.row(r), b.row(r));
        let (na, nb) = (dot(ar, ar).sqrt(), dot(br, br).sqrt());
        if na < COSINE_DEGENERATE_NORM || nb < COSINE_DEGENERATE_NORM {
            return Err(TensorError::Degenerate {
                op: OP,
                detail: format!("row {r} has norm below {COSINE_DEGENERATE_NORM:e} ({na:e}, {nb:e})"),
            });
        }
        let c = dot(ar, br) / ((na + COSINE_EPS) * (nb + COSINE_EPS));
        out.push(c.clamp(-1.0, 1.0));
        norms.push((na, nb));
    }
    Ok((Tensor::new(vec![rows], out)?, norms))
}

pub fn cosine_backward(
    a: &Tensor,
    b: &Tensor,
    norms: &[(f64, f64)],
    g: &Tensor,
    need: [bool; 2],
) -> [Option<Tensor>; 2] {
    let d = a.shape()[1];
    let mut ga = need[0].then(|| vec![0.0; a.len()]);
    let mut gb = need[1].then(|| vec![0.0; b.len()]);
    for (r, &(na, nb)) in norms.iter().enumerate() {
        let (ar, br) = (a.row(r), b.row(r));
        let (da, db) = (na + COSINE_EPS, nb + COSINE_EPS);
        let s = dot(ar, br);
        let gr = g.data()[r];
        if let Some(ga) = ga.as_mut() {
            let row = &mut ga[r * d..(r + 1) * d];
            let ca = gr / (da * db);
            let cs = gr * s / (da * da * db * na);
            for i in 0..d {
                row[i] = ca * br[i] - cs * ar[i];
            }
        }
        if let Some(gb) = gb.as_mut() {
            let row = &mut gb[r * d..(r + 1) * d];
            let cb = gr / (da * db);
            let cs = gr * s / (db * db * da * nb);
            for i in 0..d {
                row[i] = cb * ar[i] - cs * br[i];
            }
        }
    }
    [
        ga.map(|v| Tensor::new(a.shape().to_vec(), v).unwrap()),
        gb.map(|v| Tensor::new(b.shape().to_vec(), v).unwrap()),
    ]
}

// ── KL divergence ────────────────────────────────────────────────────

/// Batch mean of `Σ_j P_j ln(P_j / max(Q_j, floor))`, with `0·ln 0 = 0`.
pub fn kl_forward(p: &Tensor, q: &Tensor) -> Result<Tensor> {
    const OP: &str = "kl_divergence";
    expect_rank(OP, p, 2)?;
    if p.shape() != q.shape() {
        return Err(TensorError::shape(
            OP,
            format!("teacher {:?} vs student {:?}", p.shape(), q.shape()),
        ));
    }
    let rows = p.shape()[0];
    let mut total = 0.0;
    for (&pv, &qv) in p.data().iter().zip(q.data()) {
        if pv > 0.0 {
            total += pv * (pv / qv.max(KL_PROB_FLOOR)).ln();
        }
    }
    Ok(Tensor::scalar(total / rows as f64))
}

pub fn kl_backward(p: &Tensor, q: &Tensor, g: f64) -> Tensor {
    let scale = g / p.shape()[0] as f64;
    let data = p
        .data()
        .iter()
        .zip(q.data())
        .map(|(&pv, &qv)| {
            if pv > 0.0 && qv >= KL_PROB_FLOOR {
                -scale * pv / qv
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(q.shape().to_vec(), data).unwrap()
}
