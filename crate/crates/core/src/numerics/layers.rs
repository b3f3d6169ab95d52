//! Eager, tensor-in/tensor-out entry points for the individual layers.
//! These wrap one-off graphs around the same kernels the model uses, so a
//! direct call and the in-graph op cannot drift apart.

use super::graph::Graph;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Convert a [C,H,W] (or [B,C,H,W]) tensor to the NHWC layout used internally.
pub fn chw_to_nhwc<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let s = t.shape();
    let (b, c, h, w) = match s.len() {
        3 => (1, s[0], s[1], s[2]),
        4 => (s[0], s[1], s[2], s[3]),
        _ => return Err(Error::shape(format!("expected CHW or NCHW, got {:?}", s))),
    };
    let src = t.data();
    let mut out = vec![T::ZERO; b * h * w * c];
    for bi in 0..b {
        for ci in 0..c {
            for y in 0..h {
                for x in 0..w {
                    out[((bi * h + y) * w + x) * c + ci] = src[((bi * c + ci) * h + y) * w + x];
                }
            }
        }
    }
    Tensor::new(vec![b, h, w, c], out)
}

/// Convert NHWC back to [B,C,H,W].
pub fn nhwc_to_chw<T: Scalar>(t: &Tensor<T>) -> Result<Tensor<T>> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(Error::shape(format!("expected NHWC, got {:?}", s)));
    }
    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
    let src = t.data();
    let mut out = vec![T::ZERO; b * c * h * w];
    for bi in 0..b {
        for y in 0..h {
            for x in 0..w {
                for ci in 0..c {
                    out[((bi * c + ci) * h + y) * w + x] = src[((bi * h + y) * w + x) * c + ci];
                }
            }
        }
    }
    Tensor::new(vec![b, c, h, w], out)
}

/// 2-D convolution on a [C,H,W] or [B,C,H,W] input with an [out,in,k,k]
/// kernel. Output keeps the input's layout convention.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let batched = input.shape().len() == 4;
    let nhwc = chw_to_nhwc(input)?;
    let mut g: Graph<T> = Graph::inference();
    let x = g.input(nhwc.shape().to_vec(), nhwc.data().to_vec())?;
    let w = g.input(kernel.shape().to_vec(), kernel.data().to_vec())?;
    let y = g.conv2d(x, w, stride, padding)?;
    let out = Tensor::new(g.shape(y).to_vec(), g.value(y).to_vec())?;
    let chw = nhwc_to_chw(&out)?;
    if batched {
        Ok(chw)
    } else {
        let (s, d) = chw.into_parts();
        Tensor::new(s[1..].to_vec(), d)
    }
}

/// Affine map F -> C applied to a conditioning vector (used for the
/// conditional scale and shift of conditional batch normalization).
#[derive(Debug, Clone)]
pub struct AffineMap<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

impl<T: Scalar> AffineMap<T> {
    pub fn new(w: Tensor<T>, b: Tensor<T>) -> Result<Self> {
        if w.shape().len() != 2 || b.shape().len() != 1 || w.shape()[1] != b.shape()[0] {
            return Err(Error::shape(format!(
                "affine map wants [F,C] and [C], got {:?} and {:?}",
                w.shape(),
                b.shape()
            )));
        }
        Ok(AffineMap { w, b })
    }

    /// condition [B,F] -> [B,C]
    pub fn apply(&self, condition: &[T], batch: usize) -> Vec<T> {
        let f = self.w.shape()[0];
        let c = self.w.shape()[1];
        let mut out = vec![T::ZERO; batch * c];
        super::kernels::matmul(condition, self.w.data(), batch, f, c, &mut out);
        for row in out.chunks_mut(c) {
            for (o, &bv) in row.iter_mut().zip(self.b.data().iter()) {
                *o += bv;
            }
        }
        out
    }
}

/// Conditional batch normalization over a [B,C,spatial...] tensor: per-channel
/// normalization over the batch and spatial axes, then scale by gamma(cond)
/// and shift by beta(cond). Training mode uses batch statistics and requires
/// B >= 2; pass running statistics for inference.
pub fn conditional_batch_norm<T: Scalar>(
    x: &Tensor<T>,
    condition: &Tensor<T>,
    scale_map: &AffineMap<T>,
    shift_map: &AffineMap<T>,
    eps: f64,
    training: bool,
    running: Option<(&[T], &[T])>,
) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(Error::shape(format!("cbn expects [B,C,...], got {:?}", s)));
    }
    let (b, c) = (s[0], s[1]);
    let k: usize = s[2..].iter().product::<usize>().max(1);
    if training && b < 2 {
        return Err(Error::numeric(
            "conditional batch norm: batch size must be >= 2 in training mode",
        ));
    }
    if condition.shape().len() != 2 || condition.shape()[0] != b {
        return Err(Error::shape(format!(
            "condition must be [B,F], got {:?}",
            condition.shape()
        )));
    }
    if !training && running.is_none() {
        return Err(Error::config("inference-mode cbn needs running statistics"));
    }

    // [B,C,K] -> rows (b*K + k) x C so channel statistics run over columns.
    let src = x.data();
    let mut rows = vec![T::ZERO; b * k * c];
    for bi in 0..b {
        for ci in 0..c {
            for ki in 0..k {
                rows[(bi * k + ki) * c + ci] = src[(bi * c + ci) * k + ki];
            }
        }
    }

    let mut g: Graph<T> = Graph::new(training);
    g.track_grads = false;
    let xid = g.input(vec![b * k, c], rows)?;
    let xn = g.col_norm(xid, T::from_f64(eps), if training { None } else { running })?;

    let gamma = scale_map.apply(condition.data(), b);
    let beta = shift_map.apply(condition.data(), b);
    let gid = g.input(vec![b, c], gamma)?;
    let bid = g.input(vec![b, c], beta)?;
    let ge = g.repeat_rows(gid, k)?;
    let be = g.repeat_rows(bid, k)?;
    let scaled = g.mul(xn, ge)?;
    let y = g.add(scaled, be)?;

    let ydata = g.value(y);
    let mut out = vec![T::ZERO; b * c * k];
    for bi in 0..b {
        for ci in 0..c {
            for ki in 0..k {
                out[(bi * c + ci) * k + ki] = ydata[(bi * k + ki) * c + ci];
            }
        }
    }
    Tensor::new(s.to_vec(), out)
}
