//! Dense kernels behind the graph ops. Every kernel processes batch items
//! independently and reduces across the batch in a fixed order, so results
//! do not depend on the worker count.

use num_complex::Complex64;
use rayon::prelude::*;

use super::Shape;
use crate::spectrum::{Dft2, Direction};

/// `c[m×n] = a[m×k] · b[k×n] (+ c if accumulate)`, all row-major.
/// `a_t`/`b_t` read the operand transposed from its stored layout.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: slice lengths checked above; strides describe those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output columns `[lo, hi)` whose source column `x + d` lies inside `0..w`.
fn valid_span(d: isize, w: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (w as isize - d.max(0)).max(lo as isize) as usize;
    (lo.min(w), hi)
}

/// Zero-padded "same" patches: rows are `(ci, ky, kx)`, columns pixels.
fn im2col(x: &[f64], cin: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..cin {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let (lo, hi) = valid_span(dx, w);
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out[..lo].fill(0.0);
                    out[hi..].fill(0.0);
                    let s0 = (lo as isize + dx) as usize;
                    out[lo..hi].copy_from_slice(&src[s0..s0 + hi - lo]);
                }
            }
        }
    }
}

pub(crate) struct ConvGeom {
    pub x: Shape,
    pub cout: usize,
    pub k: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.x.c * self.k * self.k
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let s = g.x;
    let hw = s.plane();
    let in_chunk = s.c * hw;
    let out_chunk = g.cout * hw;
    let mut out = vec![0.0; s.n * out_chunk];
    out.par_chunks_mut(out_chunk)
        .zip(x.par_chunks(in_chunk))
        .for_each(|(o, xn)| {
            for (co, plane) in o.chunks_mut(hw).enumerate() {
                plane.fill(b[co]);
            }
            if g.k == 1 {
                gemm(g.cout, s.c, hw, w, false, xn, false, o, true);
            } else {
                let mut cols = vec![0.0; g.patch() * hw];
                im2col(xn, s.c, s.h, s.w, g.k, &mut cols);
                gemm(g.cout, g.patch(), hw, w, false, &cols, false, o, true);
            }
        });
    out
}

/// `(C_out, C_in, k, k)` to `(C_in, C_out, k, k)` with both spatial axes reversed.
fn flip_transpose(w: &[f64], cout: usize, cin: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; w.len()];
    for co in 0..cout {
        for ci in 0..cin {
            for ky in 0..k {
                for kx in 0..k {
                    out[((ci * cout + co) * k + (k - 1 - ky)) * k + (k - 1 - kx)] =
                        w[((co * cin + ci) * k + ky) * k + kx];
                }
            }
        }
    }
    out
}

/// Returns `(dx, dw, db)`; `dx` is empty unless requested.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    gout: &[f64],
    want_dx: bool,
    want_dw: bool,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = g.x;
    let hw = s.plane();
    let in_chunk = s.c * hw;
    let out_chunk = g.cout * hw;
    let patch = g.patch();
    let flipped = if want_dx && g.k > 1 {
        flip_transpose(w, g.cout, s.c, g.k)
    } else {
        Vec::new()
    };
    let per_item: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = x
        .par_chunks(in_chunk)
        .zip(gout.par_chunks(out_chunk))
        .map(|(xn, gn)| {
            let cols = if g.k == 1 || !want_dw {
                None
            } else {
                let mut cols = vec![0.0; patch * hw];
                im2col(xn, s.c, s.h, s.w, g.k, &mut cols);
                Some(cols)
            };
            let mut dw = Vec::new();
            let mut db = Vec::new();
            if want_dw {
                dw = vec![0.0; g.cout * patch];
                let src = cols.as_deref().unwrap_or(xn);
                gemm(g.cout, hw, patch, gn, false, src, true, &mut dw, false);
                db = gn.chunks(hw).map(|p| p.iter().sum()).collect();
            }
            let mut dx = Vec::new();
            if want_dx {
                dx = vec![0.0; in_chunk];
                if g.k == 1 {
                    gemm(patch, g.cout, hw, w, true, gn, false, &mut dx, false);
                } else {
                    // correlate the output gradient with the flipped, transposed kernel
                    let mut gcols = vec![0.0; g.cout * g.k * g.k * hw];
                    im2col(gn, g.cout, s.h, s.w, g.k, &mut gcols);
                    gemm(
                        s.c,
                        g.cout * g.k * g.k,
                        hw,
                        &flipped,
                        false,
                        &gcols,
                        false,
                        &mut dx,
                        false,
                    );
                }
            }
            (dx, dw, db)
        })
        .collect();
    let mut dx = Vec::with_capacity(if want_dx { s.n * in_chunk } else { 0 });
    let mut dw = vec![0.0; if want_dw { g.cout * patch } else { 0 }];
    let mut db = vec![0.0; if want_dw { g.cout } else { 0 }];
    for (dxn, dwn, dbn) in per_item {
        dx.extend_from_slice(&dxn);
        for (a, b) in dw.iter_mut().zip(&dwn) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(&dbn) {
            *a += b;
        }
    }
    (dx, dw, db)
}

/// Separable correlation with a symmetric 1-D kernel, keeping only outputs
/// whose support lies fully inside the plane.
pub(crate) fn blur_valid_forward(s: Shape, x: &[f64], kernel: &[f64]) -> (Shape, Vec<f64>) {
    let k = kernel.len();
    let (oh, ow) = (s.h + 1 - k, s.w + 1 - k);
    let out_shape = Shape::new(s.n, s.c, oh, ow);
    let mut out = vec![0.0; out_shape.numel()];
    let mut tmp = vec![0.0; s.h * ow];
    for (xp, op) in x.chunks(s.plane()).zip(out.chunks_mut(oh * ow)) {
        for y in 0..s.h {
            let row = &xp[y * s.w..(y + 1) * s.w];
            for x in 0..ow {
                tmp[y * ow + x] = kernel.iter().zip(&row[x..x + k]).map(|(a, b)| a * b).sum();
            }
        }
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = 0.0;
                for (i, kv) in kernel.iter().enumerate() {
                    acc += kv * tmp[(y + i) * ow + x];
                }
                op[y * ow + x] = acc;
            }
        }
    }
    (out_shape, out)
}

pub(crate) fn blur_valid_backward(s: Shape, gout: &[f64], kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (oh, ow) = (s.h + 1 - k, s.w + 1 - k);
    let mut dx = vec![0.0; s.numel()];
    let mut tmp = vec![0.0; s.h * ow];
    for (gp, dp) in gout.chunks(oh * ow).zip(dx.chunks_mut(s.plane())) {
        tmp.fill(0.0);
        for y in 0..oh {
            for x in 0..ow {
                let g = gp[y * ow + x];
                for (i, kv) in kernel.iter().enumerate() {
                    tmp[(y + i) * ow + x] += kv * g;
                }
            }
        }
        for y in 0..s.h {
            let row = &mut dp[y * s.w..(y + 1) * s.w];
            for x in 0..ow {
                let g = tmp[y * ow + x];
                for (i, kv) in kernel.iter().enumerate() {
                    row[x + i] += kv * g;
                }
            }
        }
    }
    dx
}

/// Unitary DFT of each real `(n, c)` plane into interleaved real/imaginary
/// planes: output channel `2c` holds the real part, `2c + 1` the imaginary.
pub(crate) fn dft_real_planes(s: Shape, x: &[f64]) -> Vec<f64> {
    let plan = Dft2::new(s.w, s.h);
    let p = s.plane();
    let mut out = vec![0.0; 2 * s.numel()];
    out.par_chunks_mut(2 * p)
        .zip(x.par_chunks(p))
        .for_each(|(o, xp)| {
            let z = plan.forward_real(xp);
            let (re, im) = o.split_at_mut(p);
            for (i, v) in z.iter().enumerate() {
                re[i] = v.re;
                // keep imaginary zeros positive so phases of real bins are 0 or +π
                im[i] = if v.im == 0.0 { 0.0 } else { v.im };
            }
        });
    out
}

/// Unitary transform of interleaved complex planes (as produced by
/// [`dft_real_planes`]) in the given direction.
pub(crate) fn dft_complex_planes(s: Shape, z: &[f64], dir: Direction) -> Vec<f64> {
    let plan = Dft2::new(s.w, s.h);
    let p = s.plane();
    let mut out = vec![0.0; 2 * s.numel()];
    out.par_chunks_mut(2 * p)
        .zip(z.par_chunks(2 * p))
        .for_each(|(o, zp)| {
            let mut buf: Vec<Complex64> =
                (0..p).map(|i| Complex64::new(zp[i], zp[p + i])).collect();
            plan.process(&mut buf, dir);
            let (re, im) = o.split_at_mut(p);
            for (i, v) in buf.iter().enumerate() {
                re[i] = v.re;
                im[i] = v.im;
            }
        });
    out
}
