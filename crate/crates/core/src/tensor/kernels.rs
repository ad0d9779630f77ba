//! Raw slice kernels behind the differentiable ops.
//!
//! Layouts are row-major: matrices are `[rows, cols]`, images are NHWC and
//! convolution kernels are `[kh, kw, c_in, c_out]`. Every output element is
//! produced by a single closure call that reduces in a fixed order, so the
//! serial and parallel paths agree bit-for-bit.

use crate::par;
use crate::real::Real;

/// `out[m,n] = a[m,k] · b[k,n]`.
pub fn matmul<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    par::chunks_mut(&mut out, n, m * n * k, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bpj) in row.iter_mut().zip(b_row) {
                *o += aip * bpj;
            }
        }
    });
    out
}

/// `out[k,n] = a[m,k]ᵀ · g[m,n]`.
pub fn matmul_tn<T: Real>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * n];
    par::chunks_mut(&mut out, n, m * n * k, |p, row| {
        for i in 0..m {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let g_row = &g[i * n..(i + 1) * n];
            for (o, &gij) in row.iter_mut().zip(g_row) {
                *o += aip * gij;
            }
        }
    });
    out
}

/// `out[m,k] = g[m,n] · b[k,n]ᵀ`.
pub fn matmul_nt<T: Real>(g: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * k];
    par::chunks_mut(&mut out, k, m * n * k, |i, row| {
        let g_row = &g[i * n..(i + 1) * n];
        for (p, o) in row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&x, &y) in g_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o = acc;
        }
    });
    out
}

/// Geometry of a valid, stride-1 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub h: usize,
    pub w: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub c_out: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        self.h - self.kh + 1
    }

    pub fn out_w(&self) -> usize {
        self.w - self.kw + 1
    }

    fn work(&self) -> usize {
        self.batch * self.out_h() * self.out_w() * self.kh * self.kw * self.c_in * self.c_out
    }
}

/// Valid cross-correlation: `[b,h,w,ci] ⋆ [kh,kw,ci,co] -> [b,oh,ow,co]`.
pub fn conv2d<T: Real>(input: &[T], kernel: &[T], g: ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![T::zero(); g.batch * oh * ow * g.c_out];
    par::chunks_mut(&mut out, ow * g.c_out, g.work(), |row_idx, row| {
        let (b, y) = (row_idx / oh, row_idx % oh);
        for x in 0..ow {
            let o = &mut row[x * g.c_out..(x + 1) * g.c_out];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let in_base = ((b * g.h + y + ky) * g.w + x + kx) * g.c_in;
                    let k_base = (ky * g.kw + kx) * g.c_in * g.c_out;
                    for ci in 0..g.c_in {
                        let a = input[in_base + ci];
                        if a == T::zero() {
                            continue;
                        }
                        let k_row = &kernel[k_base + ci * g.c_out..k_base + (ci + 1) * g.c_out];
                        for (ov, &kv) in o.iter_mut().zip(k_row) {
                            *ov += a * kv;
                        }
                    }
                }
            }
        }
    });
    out
}

/// Full (transposed) convolution: scatters `[b,oh,ow,co]` back through the
/// kernel to `[b,h,w,ci]`. This is the input gradient of [`conv2d`].
pub fn conv2d_transpose<T: Real>(grad_out: &[T], kernel: &[T], g: ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![T::zero(); g.batch * g.h * g.w * g.c_in];
    par::chunks_mut(&mut out, g.w * g.c_in, g.work(), |row_idx, row| {
        let (b, yy) = (row_idx / g.h, row_idx % g.h);
        for xx in 0..g.w {
            let o = &mut row[xx * g.c_in..(xx + 1) * g.c_in];
            for ky in 0..g.kh {
                if yy < ky || yy - ky >= oh {
                    continue;
                }
                let y = yy - ky;
                for kx in 0..g.kw {
                    if xx < kx || xx - kx >= ow {
                        continue;
                    }
                    let x = xx - kx;
                    let g_base = ((b * oh + y) * ow + x) * g.c_out;
                    let g_row = &grad_out[g_base..g_base + g.c_out];
                    let k_base = (ky * g.kw + kx) * g.c_in * g.c_out;
                    for (ci, ov) in o.iter_mut().enumerate() {
                        let k_row = &kernel[k_base + ci * g.c_out..k_base + (ci + 1) * g.c_out];
                        let mut acc = T::zero();
                        for (&gv, &kv) in g_row.iter().zip(k_row) {
                            acc += gv * kv;
                        }
                        *ov += acc;
                    }
                }
            }
        }
    });
    out
}

/// Kernel gradient of [`conv2d`]: `Σ_{b,y,x} in[b,y+ky,x+kx,ci] · g[b,y,x,co]`.
pub fn conv2d_kernel_grad<T: Real>(input: &[T], grad_out: &[T], g: ConvGeom) -> Vec<T> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let mut out = vec![T::zero(); g.kh * g.kw * g.c_in * g.c_out];
    par::chunks_mut(&mut out, g.c_out, g.work(), |row_idx, row| {
        let ci = row_idx % g.c_in;
        let kx = (row_idx / g.c_in) % g.kw;
        let ky = row_idx / (g.c_in * g.kw);
        for b in 0..g.batch {
            for y in 0..oh {
                for x in 0..ow {
                    let a = input[((b * g.h + y + ky) * g.w + x + kx) * g.c_in + ci];
                    if a == T::zero() {
                        continue;
                    }
                    let g_base = ((b * oh + y) * ow + x) * g.c_out;
                    for (ov, &gv) in row.iter_mut().zip(&grad_out[g_base..g_base + g.c_out]) {
                        *ov += a * gv;
                    }
                }
            }
        }
    });
    out
}

/// Per-feature (trailing axis) mean and biased variance.
pub fn feature_moments<T: Real>(x: &[T], features: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / features;
    let n = T::lit(rows as f64);
    let mut mean = vec![T::zero(); features];
    for row in x.chunks(features) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![T::zero(); features];
    for row in x.chunks(features) {
        for ((s, &v), &m) in var.iter_mut().zip(row).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    var.iter_mut().for_each(|s| *s /= n);
    (mean, var)
}

/// `(x - mean) / sqrt(var + eps)` per trailing-axis feature.
pub fn normalize<T: Real>(x: &[T], mean: &[T], var: &[T], eps: T) -> Vec<T> {
    let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let f = mean.len();
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(f) {
        for ((&v, &m), &s) in row.iter().zip(mean).zip(&inv) {
            out.push((v - m) * s);
        }
    }
    out
}

/// Input gradient of train-mode batch normalization given its output `y`.
pub fn batchnorm_backward<T: Real>(y: &[T], dy: &[T], var: &[T], eps: T) -> Vec<T> {
    let f = var.len();
    let rows = y.len() / f;
    let n = T::lit(rows as f64);
    let mut sum_dy = vec![T::zero(); f];
    let mut sum_dy_y = vec![T::zero(); f];
    for (yr, dr) in y.chunks(f).zip(dy.chunks(f)) {
        for c in 0..f {
            sum_dy[c] += dr[c];
            sum_dy_y[c] += dr[c] * yr[c];
        }
    }
    let scale: Vec<T> = var.iter().map(|&v| T::one() / ((v + eps).sqrt() * n)).collect();
    let mut dx = Vec::with_capacity(y.len());
    for (yr, dr) in y.chunks(f).zip(dy.chunks(f)) {
        for c in 0..f {
            dx.push(scale[c] * (n * dr[c] - sum_dy[c] - yr[c] * sum_dy_y[c]));
        }
    }
    dx
}
