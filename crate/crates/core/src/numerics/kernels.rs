//! Dense kernels shared by forward and backward ops.
//!
//! Every kernel computes each output element with a fixed summation order,
//! so results are bit-identical regardless of the rayon thread count.

use super::scalar::Scalar;
use rayon::prelude::*;

/// Tall matrices accumulate `A^T B` over this many fixed row blocks; the
/// partials are reduced in block order so the sum order never depends on
/// the thread count.
const REDUCE_PARTS: usize = 8;

/// out = A(m x k) @ B(k x n), row-major. `out` is overwritten.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let row_job = |(i, orow): (usize, &mut [T])| {
        for v in orow.iter_mut() {
            *v = T::ZERO;
        }
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b[kk * n..kk * n + n];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o += aik * bv;
            }
        }
    };
    if (m * k * n) < 1 << 14 {
        out.chunks_mut(n).enumerate().for_each(row_job);
    } else {
        out.par_chunks_mut(n).enumerate().for_each(row_job);
    }
}

/// out += A^T(k x m) @ B(m x n) where A is stored row-major (m x k).
/// Used for weight gradients; accumulates into `out` (k x n).
pub fn matmul_at_b_accum<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    if m * k * n < 1 << 16 || m < 2 * REDUCE_PARTS {
        for row in 0..m {
            let arow = &a[row * k..(row + 1) * k];
            let brow = &b[row * n..row * n + n];
            for (kk, &av) in arow.iter().enumerate() {
                let orow = &mut out[kk * n..kk * n + n];
                for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                    *o += av * bv;
                }
            }
        }
        return;
    }
    let rows_per = m.div_ceil(REDUCE_PARTS);
    let partials: Vec<Vec<T>> = (0..REDUCE_PARTS)
        .into_par_iter()
        .map(|p| {
            let lo = p * rows_per;
            let hi = ((p + 1) * rows_per).min(m);
            let mut part = vec![T::ZERO; k * n];
            for row in lo..hi {
                let arow = &a[row * k..(row + 1) * k];
                let brow = &b[row * n..row * n + n];
                for (kk, &av) in arow.iter().enumerate() {
                    let orow = &mut part[kk * n..kk * n + n];
                    for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                        *o += av * bv;
                    }
                }
            }
            part
        })
        .collect();
    for part in partials {
        for (o, p) in out.iter_mut().zip(part.iter()) {
            *o += *p;
        }
    }
}

/// out = A(m x k) @ B^T(k x n) where B is stored row-major (n x k).
pub fn matmul_b_t<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    // Materialize B^T once; B is a weight-sized matrix, cheap relative to the GEMM.
    let mut bt = vec![T::ZERO; k * n];
    for r in 0..n {
        for c in 0..k {
            bt[c * n + r] = b[r * k + c];
        }
    }
    matmul(a, &bt, m, k, n, out);
}

/// Geometry of one conv2d application (NHWC activations).
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub batch: usize,
    pub h_in: usize,
    pub w_in: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn patch_len(&self) -> usize {
        self.ksize * self.ksize * self.c_in
    }
    pub fn out_rows(&self) -> usize {
        self.batch * self.h_out * self.w_out
    }
}

/// Gather NHWC input into the im2col matrix: one row per output pixel,
/// columns ordered (ky, kx, c). Out-of-bounds taps contribute zero.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let patch = g.patch_len();
    debug_assert_eq!(cols.len(), g.out_rows() * patch);
    let img_len = g.h_in * g.w_in * g.c_in;
    let row_len = g.h_out * g.w_out;
    cols.par_chunks_mut(row_len * patch)
        .enumerate()
        .for_each(|(b, bcols)| {
            let img = &x[b * img_len..(b + 1) * img_len];
            for oy in 0..g.h_out {
                for ox in 0..g.w_out {
                    let dst = &mut bcols[(oy * g.w_out + ox) * patch..][..patch];
                    let mut at = 0;
                    for ky in 0..g.ksize {
                        let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                        for kx in 0..g.ksize {
                            let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                            if iy >= 0 && (iy as usize) < g.h_in && ix >= 0 && (ix as usize) < g.w_in
                            {
                                let src =
                                    (iy as usize * g.w_in + ix as usize) * g.c_in;
                                dst[at..at + g.c_in]
                                    .copy_from_slice(&img[src..src + g.c_in]);
                            } else {
                                for v in dst[at..at + g.c_in].iter_mut() {
                                    *v = T::ZERO;
                                }
                            }
                            at += g.c_in;
                        }
                    }
                }
            }
        });
}

/// Scatter-add the im2col-layout gradient back onto the NHWC input gradient.
pub fn col2im_accum<T: Scalar>(dcols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let patch = g.patch_len();
    let img_len = g.h_in * g.w_in * g.c_in;
    let row_len = g.h_out * g.w_out;
    dx.par_chunks_mut(img_len).enumerate().for_each(|(b, dimg)| {
        let bcols = &dcols[b * row_len * patch..(b + 1) * row_len * patch];
        for oy in 0..g.h_out {
            for ox in 0..g.w_out {
                let src = &bcols[(oy * g.w_out + ox) * patch..][..patch];
                let mut at = 0;
                for ky in 0..g.ksize {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    for kx in 0..g.ksize {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if iy >= 0 && (iy as usize) < g.h_in && ix >= 0 && (ix as usize) < g.w_in {
                            let dst = (iy as usize * g.w_in + ix as usize) * g.c_in;
                            for c in 0..g.c_in {
                                dimg[dst + c] += src[at + c];
                            }
                        }
                        at += g.c_in;
                    }
                }
            }
        }
    });
}

/// Repack a kernel stored [c_out, c_in, k, k] into the (ky, kx, c_in) x c_out
/// matrix that multiplies im2col rows.
pub fn pack_kernel<T: Scalar>(w: &[T], g: &ConvGeom) -> Vec<T> {
    let patch = g.patch_len();
    let mut out = vec![T::ZERO; patch * g.c_out];
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            for ky in 0..g.ksize {
                for kx in 0..g.ksize {
                    let src = ((co * g.c_in + ci) * g.ksize + ky) * g.ksize + kx;
                    let row = (ky * g.ksize + kx) * g.c_in + ci;
                    out[row * g.c_out + co] = w[src];
                }
            }
        }
    }
    out
}

/// Inverse of `pack_kernel` for the weight gradient.
pub fn unpack_kernel_grad<T: Scalar>(dw_mat: &[T], g: &ConvGeom) -> Vec<T> {
    let mut out = vec![T::ZERO; g.c_out * g.c_in * g.ksize * g.ksize];
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            for ky in 0..g.ksize {
                for kx in 0..g.ksize {
                    let dst = ((co * g.c_in + ci) * g.ksize + ky) * g.ksize + kx;
                    let row = (ky * g.ksize + kx) * g.c_in + ci;
                    out[dst] = dw_mat[row * g.c_out + co];
                }
            }
        }
    }
    out
}
