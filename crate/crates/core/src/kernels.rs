//! Per-layer forward and adjoint kernels. Images are NCHW; one sample is
//! processed at a time so every accumulation happens in a fixed order.

use crate::tensor::{mat, Real, Tensor};

/// Unfold `k×k` patches of a `c×h×w` image into a `(c·k·k) × (oh·ow)` matrix,
/// with `oh = h − k + 1`.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let p = oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((ci * k + ki) * k + kj) * p..][..p];
                for oy in 0..oh {
                    let src = &x[(ci * h + oy + ki) * w + kj..][..ow];
                    row[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add the patch matrix back onto a `c×h×w` image.
fn col2im_add<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let p = oh * ow;
    for ci in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((ci * k + ki) * k + kj) * p..][..p];
                for oy in 0..oh {
                    let dst = &mut x[(ci * h + oy + ki) * w + kj..][..ow];
                    for (d, &s) in dst.iter_mut().zip(&row[oy * ow..(oy + 1) * ow]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

fn chw(t: &Tensor<impl Real>) -> (usize, usize, usize, usize) {
    let s = t.shape();
    (s[0], s[1], s[2], s[3])
}

fn add_bias<T: Real>(out: &mut [T], bias: &[T], plane: usize) {
    for (ch, &b) in out.chunks_mut(plane).zip(bias) {
        ch.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad<T: Real>(dout: &Tensor<T>, db: &mut [T]) {
    let n = dout.batch();
    let plane = dout.sample_len() / db.len();
    for i in 0..n {
        for (g, ch) in db.iter_mut().zip(dout.sample(i).chunks(plane)) {
            *g += ch.iter().copied().sum::<T>();
        }
    }
}

pub fn conv_forward<T: Real>(x: &Tensor<T>, w: &[T], bias: Option<&[T]>, out_c: usize, k: usize) -> Tensor<T> {
    let (n, c, h, wd) = chw(x);
    let (oh, ow) = (h + 1 - k, wd + 1 - k);
    let (kk, p) = (c * k * k, oh * ow);
    let mut out = Tensor::zeros(&[n, out_c, oh, ow]);
    let mut cols = vec![T::zero(); kk * p];
    for i in 0..n {
        im2col(x.sample(i), c, h, wd, k, &mut cols);
        let o = out.sample_mut(i);
        mat::mul_acc(out_c, kk, p, w, &cols, o);
        if let Some(b) = bias {
            add_bias(o, b, p);
        }
    }
    out
}

/// Accumulates weight (and optionally bias) gradients; returns the input
/// gradient when requested.
pub fn conv_backward<T: Real>(
    x: &Tensor<T>,
    dout: &Tensor<T>,
    w: &[T],
    k: usize,
    dw: &mut [T],
    db: Option<&mut [T]>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let (n, c, h, wd) = chw(x);
    let out_c = dout.shape()[1];
    let p = (h + 1 - k) * (wd + 1 - k);
    let kk = c * k * k;
    let mut cols = vec![T::zero(); kk * p];
    let mut dcols = vec![T::zero(); kk * p];
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for i in 0..n {
        let g = dout.sample(i);
        im2col(x.sample(i), c, h, wd, k, &mut cols);
        mat::mul_nt_acc(out_c, p, kk, g, &cols, dw);
        if let Some(dx) = dx.as_mut() {
            dcols.iter_mut().for_each(|v| *v = T::zero());
            mat::mul_tn_acc(kk, out_c, p, w, g, &mut dcols);
            col2im_add(&dcols, c, h, wd, k, dx.sample_mut(i));
        }
    }
    if let Some(db) = db {
        bias_grad(dout, db);
    }
    dx
}

/// Stride-1 transposed convolution; `w` is `in_c × out_c × k × k`.
pub fn deconv_forward<T: Real>(x: &Tensor<T>, w: &[T], bias: Option<&[T]>, out_c: usize, k: usize) -> Tensor<T> {
    let (n, c, h, wd) = chw(x);
    let (oh, ow) = (h + k - 1, wd + k - 1);
    let (ok, p) = (out_c * k * k, h * wd);
    let mut out = Tensor::zeros(&[n, out_c, oh, ow]);
    let mut cols = vec![T::zero(); ok * p];
    for i in 0..n {
        cols.iter_mut().for_each(|v| *v = T::zero());
        mat::mul_tn_acc(ok, c, p, w, x.sample(i), &mut cols);
        let o = out.sample_mut(i);
        col2im_add(&cols, out_c, oh, ow, k, o);
        if let Some(b) = bias {
            add_bias(o, b, oh * ow);
        }
    }
    out
}

pub fn deconv_backward<T: Real>(
    x: &Tensor<T>,
    dout: &Tensor<T>,
    w: &[T],
    k: usize,
    dw: &mut [T],
    db: Option<&mut [T]>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let (n, c, h, wd) = chw(x);
    let (_, out_c, oh, ow) = chw(dout);
    let (ok, p) = (out_c * k * k, h * wd);
    let mut dcols = vec![T::zero(); ok * p];
    let mut dx = need_dx.then(|| Tensor::zeros(x.shape()));
    for i in 0..n {
        im2col(dout.sample(i), out_c, oh, ow, k, &mut dcols);
        mat::mul_nt_acc(c, p, ok, x.sample(i), &dcols, dw);
        if let Some(dx) = dx.as_mut() {
            mat::mul_acc(c, ok, p, w, &dcols, dx.sample_mut(i));
        }
    }
    if let Some(db) = db {
        bias_grad(dout, db);
    }
    dx
}

/// 2×2 stride-2 max pooling (floor). Returns the output and, per output
/// element, the flat in-sample index of the selected input (first maximum).
pub fn pool_forward<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let (n, c, h, w) = chw(x);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for i in 0..n {
        let xs = x.sample(i);
        let os = out.sample_mut(i);
        for ci in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (ci * h + 2 * oy) * w + 2 * ox;
                    let mut best = base;
                    for idx in [base + 1, base + w, base + w + 1] {
                        if xs[idx] > xs[best] {
                            best = idx;
                        }
                    }
                    os[(ci * oh + oy) * ow + ox] = xs[best];
                    arg.push(best as u32);
                }
            }
        }
    }
    (out, arg)
}

/// Gather through recorded pooling choices (used for tangents).
pub fn pool_gather<T: Real>(x: &Tensor<T>, out_shape: &[usize], arg: &[u32]) -> Tensor<T> {
    let mut out = Tensor::zeros(out_shape);
    let per = out.sample_len();
    for i in 0..x.batch() {
        let xs = x.sample(i);
        for (o, &a) in out.sample_mut(i).iter_mut().zip(&arg[i * per..(i + 1) * per]) {
            *o = xs[a as usize];
        }
    }
    out
}

pub fn pool_backward<T: Real>(in_shape: &[usize], dout: &Tensor<T>, arg: &[u32]) -> Tensor<T> {
    let mut dx = Tensor::zeros(in_shape);
    let per = dout.sample_len();
    for i in 0..dout.batch() {
        let g = dout.sample(i);
        let d = dx.sample_mut(i);
        for (&gv, &a) in g.iter().zip(&arg[i * per..(i + 1) * per]) {
            d[a as usize] += gv;
        }
    }
    dx
}

/// `out = x · wᵀ + b`, flattening every sample of `x`.
pub fn linear_forward<T: Real>(x: &Tensor<T>, w: &[T], bias: Option<&[T]>, out_f: usize) -> Tensor<T> {
    let (n, inf) = (x.batch(), x.sample_len());
    let mut out = Tensor::zeros(&[n, out_f]);
    mat::mul_nt_acc(n, inf, out_f, x.data(), w, out.data_mut());
    if let Some(b) = bias {
        for i in 0..n {
            for (o, &bv) in out.sample_mut(i).iter_mut().zip(b) {
                *o += bv;
            }
        }
    }
    out
}

pub fn linear_backward<T: Real>(
    x: &Tensor<T>,
    dout: &Tensor<T>,
    w: &[T],
    dw: &mut [T],
    db: Option<&mut [T]>,
    need_dx: bool,
) -> Option<Tensor<T>> {
    let (n, inf) = (x.batch(), x.sample_len());
    let out_f = dout.sample_len();
    // Sample-major accumulation keeps the reduction order fixed.
    for i in 0..n {
        mat::mul_tn_acc(out_f, 1, inf, dout.sample(i), x.sample(i), dw);
    }
    if let Some(db) = db {
        for i in 0..n {
            for (d, &g) in db.iter_mut().zip(dout.sample(i)) {
                *d += g;
            }
        }
    }
    need_dx.then(|| {
        let mut dx = Tensor::zeros(x.shape());
        mat::mul_acc(n, out_f, inf, dout.data(), w, dx.data_mut());
        dx
    })
}
