//! Define-by-run reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is rebuilt for every forward pass. Parameters enter as leaves
//! bound to a [`ParameterSet`](super::params::ParameterSet) slot; after
//! [`Graph::backward`] the accumulated leaf gradients are read back through
//! [`Graph::param_grads`]. Every op output is scanned for non-finite values
//! so NaN/Inf fail fast instead of flowing onward.

use super::kernels::{
    col2im_accum, im2col, matmul, matmul_at_b_accum, matmul_b_t, pack_kernel, unpack_kernel_grad,
    ConvGeom,
};
use super::params::ParameterSet;
use super::scalar::Scalar;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use std::collections::HashMap;

pub type NodeId = usize;

enum Op<T> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    Matmul {
        a: NodeId,
        b: NodeId,
    },
    BiasRows {
        x: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Sigmoid {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Mul {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        c: T,
    },
    /// Per-column normalization of a [rows, cols] matrix (batch-norm core,
    /// affine handled by the caller). Output is the normalized matrix.
    ColNorm {
        x: NodeId,
        invstd: Vec<T>,
        batch_mean: Vec<T>,
        batch_var: Vec<T>,
        frozen: bool,
    },
    RepeatRows {
        x: NodeId,
        times: usize,
    },
    GlobalAvgPool {
        x: NodeId,
    },
    RowStats {
        x: NodeId,
        argmin: Vec<usize>,
        argmax: Vec<usize>,
    },
    ConcatCols {
        xs: Vec<NodeId>,
    },
    SoftmaxRows {
        x: NodeId,
    },
    MixBranches {
        probs: Vec<NodeId>,
        alpha: NodeId,
    },
    BceMean {
        p: NodeId,
        labels: Vec<T>,
        eps: T,
    },
    MeanAll {
        x: NodeId,
    },
    Reshape {
        x: NodeId,
    },
}

struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    bindings: Vec<(usize, NodeId)>,
    bound: HashMap<usize, NodeId>,
    pub training: bool,
    pub nan_check: bool,
    pub track_grads: bool,
}

impl<T: Scalar> Graph<T> {
    pub fn new(training: bool) -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            bindings: Vec::new(),
            bound: HashMap::new(),
            training,
            nan_check: true,
            track_grads: true,
        }
    }

    /// Inference-only graph: parameters enter as plain inputs, no gradients.
    pub fn inference() -> Self {
        let mut g = Graph::new(false);
        g.track_grads = false;
        g
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id].data
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].shape
    }

    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>, needs_grad: bool) -> Result<NodeId> {
        if self.nan_check && !data.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite value produced by {} (node {})",
                op_name(&op),
                self.nodes.len()
            )));
        }
        let numel: usize = shape.iter().product();
        debug_assert_eq!(numel, data.len());
        self.nodes.push(Node {
            shape,
            data,
            op,
            needs_grad: needs_grad && self.track_grads,
        });
        Ok(self.nodes.len() - 1)
    }

    pub fn input(&mut self, shape: Vec<usize>, data: Vec<T>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "input shape {:?} does not match {} values",
                shape,
                data.len()
            )));
        }
        self.push(shape, data, Op::Leaf, false)
    }

    /// Leaf from a tensor, tracking gradients when `requires_grad` is set.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Result<NodeId> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad)
    }

    /// Bind a named parameter as a gradient-tracked leaf. Repeated binds of
    /// the same parameter return the existing node.
    pub fn param(&mut self, params: &ParameterSet<T>, name: &str) -> Result<NodeId> {
        let idx = params
            .index(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))?;
        if let Some(&id) = self.bound.get(&idx) {
            return Ok(id);
        }
        let p = params.at(idx);
        let id = self.push(
            p.value.shape().to_vec(),
            p.value.data().to_vec(),
            Op::Leaf,
            p.trainable,
        )?;
        self.bindings.push((idx, id));
        self.bound.insert(idx, id);
        Ok(id)
    }

    /// (parameter slot, accumulated gradient) pairs after `backward`.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &[T])> {
        self.bindings
            .iter()
            .filter_map(|&(idx, node)| self.grad(node).map(|g| (idx, g)))
    }

    // ---- op builders ------------------------------------------------------

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    /// 2-D convolution over NHWC activations with an [out, in, k, k] kernel.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        let xs = self.nodes[x].shape.clone();
        let ws = self.nodes[w].shape.clone();
        if xs.len() != 4 || ws.len() != 4 {
            return Err(Error::shape(format!(
                "conv2d expects NHWC input and [out,in,k,k] kernel, got {:?} and {:?}",
                xs, ws
            )));
        }
        let (batch, h_in, w_in, c_in) = (xs[0], xs[1], xs[2], xs[3]);
        let (c_out, kc_in, k, k2) = (ws[0], ws[1], ws[2], ws[3]);
        if kc_in != c_in || k != k2 {
            return Err(Error::shape(format!(
                "kernel {:?} incompatible with input channels {}",
                ws, c_in
            )));
        }
        if k % 2 == 0 {
            return Err(Error::shape(format!("kernel size {k} must be odd")));
        }
        if h_in + 2 * pad < k || w_in + 2 * pad < k || stride == 0 {
            return Err(Error::shape(format!(
                "conv2d geometry invalid: input {h_in}x{w_in}, k={k}, pad={pad}, stride={stride}"
            )));
        }
        let h_out = (h_in + 2 * pad - k) / stride + 1;
        let w_out = (w_in + 2 * pad - k) / stride + 1;
        let geom = ConvGeom {
            batch,
            h_in,
            w_in,
            c_in,
            c_out,
            ksize: k,
            stride,
            pad,
            h_out,
            w_out,
        };
        let mut cols = vec![T::ZERO; geom.out_rows() * geom.patch_len()];
        im2col(&self.nodes[x].data, &geom, &mut cols);
        let wmat = pack_kernel(&self.nodes[w].data, &geom);
        let mut out = vec![T::ZERO; geom.out_rows() * c_out];
        matmul(&cols, &wmat, geom.out_rows(), geom.patch_len(), c_out, &mut out);
        let needs = self.needs(&[x, w]);
        let cols = if needs { cols } else { Vec::new() };
        self.push(
            vec![batch, h_out, w_out, c_out],
            out,
            Op::Conv2d { x, w, geom, cols },
            needs,
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let asha = self.nodes[a].shape.clone();
        let bsha = self.nodes[b].shape.clone();
        if asha.len() != 2 || bsha.len() != 2 || asha[1] != bsha[0] {
            return Err(Error::shape(format!("matmul {:?} x {:?}", asha, bsha)));
        }
        let (m, k, n) = (asha[0], asha[1], bsha[1]);
        let mut out = vec![T::ZERO; m * n];
        matmul(&self.nodes[a].data, &self.nodes[b].data, m, k, n, &mut out);
        let needs = self.needs(&[a, b]);
        self.push(vec![m, n], out, Op::Matmul { a, b }, needs)
    }

    /// Add a length-N bias vector to every row of a [..., N] tensor.
    pub fn bias_rows(&mut self, x: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].shape.clone();
        let n = *xs.last().ok_or_else(|| Error::shape("bias_rows on scalar"))?;
        if self.nodes[b].shape != [n] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match row width {}",
                self.nodes[b].shape, n
            )));
        }
        let bias = &self.nodes[b].data;
        let mut out = self.nodes[x].data.clone();
        for row in out.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(bias.iter()) {
                *o += bv;
            }
        }
        let needs = self.needs(&[x, b]);
        self.push(xs, out, Op::BiasRows { x, b }, needs)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<T> = self.nodes[x]
            .data
            .iter()
            .map(|&v| if v > T::ZERO { v } else { T::ZERO })
            .collect();
        let needs = self.needs(&[x]);
        self.push(self.nodes[x].shape.clone(), out, Op::Relu { x }, needs)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        let out: Vec<T> = self.nodes[x]
            .data
            .iter()
            .map(|&v| T::ONE / (T::ONE + (-v).exp()))
            .collect();
        let needs = self.needs(&[x]);
        self.push(self.nodes[x].shape.clone(), out, Op::Sigmoid { x }, needs)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::shape(format!(
                "add shape mismatch {:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let out: Vec<T> = self.nodes[a]
            .data
            .iter()
            .zip(self.nodes[b].data.iter())
            .map(|(&x, &y)| x + y)
            .collect();
        let needs = self.needs(&[a, b]);
        self.push(self.nodes[a].shape.clone(), out, Op::Add { a, b }, needs)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a].shape != self.nodes[b].shape {
            return Err(Error::shape(format!(
                "mul shape mismatch {:?} vs {:?}",
                self.nodes[a].shape, self.nodes[b].shape
            )));
        }
        let out: Vec<T> = self.nodes[a]
            .data
            .iter()
            .zip(self.nodes[b].data.iter())
            .map(|(&x, &y)| x * y)
            .collect();
        let needs = self.needs(&[a, b]);
        self.push(self.nodes[a].shape.clone(), out, Op::Mul { a, b }, needs)
    }

    pub fn scale(&mut self, x: NodeId, c: T) -> Result<NodeId> {
        let out: Vec<T> = self.nodes[x].data.iter().map(|&v| v * c).collect();
        let needs = self.needs(&[x]);
        self.push(self.nodes[x].shape.clone(), out, Op::Scale { x, c }, needs)
    }

    /// Normalize each column of a [rows, cols] matrix to zero mean / unit
    /// variance over the rows. In training mode the batch statistics are used
    /// (and exposed via [`Graph::col_norm_batch_stats`]); passing
    /// `frozen_stats` normalizes with fixed running statistics instead.
    pub fn col_norm(
        &mut self,
        x: NodeId,
        eps: T,
        frozen_stats: Option<(&[T], &[T])>,
    ) -> Result<NodeId> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 2 {
            return Err(Error::shape(format!("col_norm expects [rows, cols], got {:?}", xs)));
        }
        let (rows, cols) = (xs[0], xs[1]);
        if rows < 2 && frozen_stats.is_none() {
            return Err(Error::numeric(
                "col_norm: variance undefined for fewer than 2 rows in training mode",
            ));
        }
        let data = &self.nodes[x].data;
        let (mean, var, frozen) = match frozen_stats {
            Some((m, v)) => {
                if m.len() != cols || v.len() != cols {
                    return Err(Error::shape("running statistics length mismatch"));
                }
                (m.to_vec(), v.to_vec(), true)
            }
            None => {
                let inv_rows = T::from_f64(1.0 / rows as f64);
                let mut mean = vec![T::ZERO; cols];
                for row in data.chunks(cols) {
                    for (m, &v) in mean.iter_mut().zip(row.iter()) {
                        *m += v;
                    }
                }
                for m in mean.iter_mut() {
                    *m *= inv_rows;
                }
                let mut var = vec![T::ZERO; cols];
                for row in data.chunks(cols) {
                    for ((s, &v), &m) in var.iter_mut().zip(row.iter()).zip(mean.iter()) {
                        let d = v - m;
                        *s += d * d;
                    }
                }
                for s in var.iter_mut() {
                    *s *= inv_rows;
                }
                (mean, var, false)
            }
        };
        let invstd: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps).sqrt()).collect();
        let mut out = vec![T::ZERO; rows * cols];
        for (orow, xrow) in out.chunks_mut(cols).zip(data.chunks(cols)) {
            for j in 0..cols {
                orow[j] = (xrow[j] - mean[j]) * invstd[j];
            }
        }
        let needs = self.needs(&[x]);
        self.push(
            xs,
            out,
            Op::ColNorm {
                x,
                invstd,
                batch_mean: mean,
                batch_var: var,
                frozen,
            },
            needs,
        )
    }

    /// Batch mean/variance captured by a training-mode `col_norm` node.
    pub fn col_norm_batch_stats(&self, id: NodeId) -> Option<(&[T], &[T])> {
        match &self.nodes[id].op {
            Op::ColNorm {
                batch_mean,
                batch_var,
                frozen: false,
                ..
            } => Some((batch_mean, batch_var)),
            _ => None,
        }
    }

    /// Repeat each row of a [B, C] matrix `times` consecutive times.
    pub fn repeat_rows(&mut self, x: NodeId, times: usize) -> Result<NodeId> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 2 || times == 0 {
            return Err(Error::shape(format!("repeat_rows on {:?} x{}", xs, times)));
        }
        let (b, c) = (xs[0], xs[1]);
        let mut out = vec![T::ZERO; b * times * c];
        for (bi, row) in self.nodes[x].data.chunks(c).enumerate() {
            for t in 0..times {
                out[(bi * times + t) * c..(bi * times + t + 1) * c].copy_from_slice(row);
            }
        }
        let needs = self.needs(&[x]);
        self.push(vec![b * times, c], out, Op::RepeatRows { x, times }, needs)
    }

    /// NHWC -> [B, C] spatial mean.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 4 {
            return Err(Error::shape(format!("global_avg_pool expects NHWC, got {:?}", xs)));
        }
        let (b, h, w, c) = (xs[0], xs[1], xs[2], xs[3]);
        let inv = T::from_f64(1.0 / (h * w) as f64);
        let mut out = vec![T::ZERO; b * c];
        for bi in 0..b {
            let img = &self.nodes[x].data[bi * h * w * c..(bi + 1) * h * w * c];
            let orow = &mut out[bi * c..(bi + 1) * c];
            for px in img.chunks(c) {
                for (o, &v) in orow.iter_mut().zip(px.iter()) {
                    *o += v;
                }
            }
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        let needs = self.needs(&[x]);
        self.push(vec![b, c], out, Op::GlobalAvgPool { x }, needs)
    }

    /// Per-row (mean, min, max) of a [B, K] matrix -> [B, 3].
    pub fn row_stats(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 2 || xs[1] == 0 {
            return Err(Error::shape(format!("row_stats expects [B, K>0], got {:?}", xs)));
        }
        let (b, k) = (xs[0], xs[1]);
        let inv = T::from_f64(1.0 / k as f64);
        let mut out = vec![T::ZERO; b * 3];
        let mut argmin = vec![0usize; b];
        let mut argmax = vec![0usize; b];
        for (bi, row) in self.nodes[x].data.chunks(k).enumerate() {
            let mut sum = T::ZERO;
            let (mut mn, mut mx) = (row[0], row[0]);
            let (mut imn, mut imx) = (0usize, 0usize);
            for (j, &v) in row.iter().enumerate() {
                sum += v;
                if v < mn {
                    mn = v;
                    imn = j;
                }
                if v > mx {
                    mx = v;
                    imx = j;
                }
            }
            out[bi * 3] = sum * inv;
            out[bi * 3 + 1] = mn;
            out[bi * 3 + 2] = mx;
            argmin[bi] = imn;
            argmax[bi] = imx;
        }
        let needs = self.needs(&[x]);
        self.push(vec![b, 3], out, Op::RowStats { x, argmin, argmax }, needs)
    }

    /// Concatenate [B, F_i] matrices along columns.
    pub fn concat_cols(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(Error::shape("concat_cols of nothing"));
        }
        let b = self.nodes[xs[0]].shape[0];
        let mut widths = Vec::with_capacity(xs.len());
        for &id in xs {
            let s = &self.nodes[id].shape;
            if s.len() != 2 || s[0] != b {
                return Err(Error::shape(format!("concat_cols row mismatch: {:?}", s)));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![T::ZERO; b * total];
        for bi in 0..b {
            let mut at = 0;
            for (&id, &w) in xs.iter().zip(widths.iter()) {
                out[bi * total + at..bi * total + at + w]
                    .copy_from_slice(&self.nodes[id].data[bi * w..(bi + 1) * w]);
                at += w;
            }
        }
        let needs = self.needs(xs);
        self.push(vec![b, total], out, Op::ConcatCols { xs: xs.to_vec() }, needs)
    }

    pub fn softmax_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let xs = self.nodes[x].shape.clone();
        if xs.len() != 2 {
            return Err(Error::shape(format!("softmax_rows expects [B, N], got {:?}", xs)));
        }
        let n = xs[1];
        let mut out = self.nodes[x].data.clone();
        for row in out.chunks_mut(n) {
            let mut mx = row[0];
            for &v in row.iter() {
                mx = mx.maxs(v);
            }
            let mut sum = T::ZERO;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let needs = self.needs(&[x]);
        self.push(xs, out, Op::SoftmaxRows { x }, needs)
    }

    /// Convex mixture of per-branch probability rows: given branch tensors
    /// each [B, K] and weights [B, n_branches], returns [B, K] with
    /// `out[b,k] = sum_i alpha[b,i] * probs_i[b,k]`.
    pub fn mix_branches(&mut self, probs: &[NodeId], alpha: NodeId) -> Result<NodeId> {
        if probs.is_empty() {
            return Err(Error::shape("mix_branches with no branches"));
        }
        let ps = self.nodes[probs[0]].shape.clone();
        if ps.len() != 2 {
            return Err(Error::shape(format!("branch probs must be [B, K], got {:?}", ps)));
        }
        let (b, k) = (ps[0], ps[1]);
        for &id in probs {
            if self.nodes[id].shape != ps {
                return Err(Error::shape("branch prob shapes differ"));
            }
        }
        if self.nodes[alpha].shape != [b, probs.len()] {
            return Err(Error::shape(format!(
                "alpha shape {:?} does not match {} branches x {} samples",
                self.nodes[alpha].shape,
                probs.len(),
                b
            )));
        }
        let nb = probs.len();
        let mut out = vec![T::ZERO; b * k];
        for bi in 0..b {
            for (i, &pid) in probs.iter().enumerate() {
                let a = self.nodes[alpha].data[bi * nb + i];
                let prow = &self.nodes[pid].data[bi * k..(bi + 1) * k];
                let orow = &mut out[bi * k..(bi + 1) * k];
                for (o, &p) in orow.iter_mut().zip(prow.iter()) {
                    *o += a * p;
                }
            }
        }
        let needs = self.needs(probs) || self.needs(&[alpha]);
        self.push(
            vec![b, k],
            out,
            Op::MixBranches {
                probs: probs.to_vec(),
                alpha,
            },
            needs,
        )
    }

    /// Mean binary cross-entropy between probabilities and {0,1} labels,
    /// with probabilities clamped to [eps, 1-eps].
    pub fn bce_mean(&mut self, p: NodeId, labels: &[T], eps: T) -> Result<NodeId> {
        let n = self.nodes[p].data.len();
        if labels.len() != n {
            return Err(Error::shape(format!(
                "bce_mean: {} probabilities vs {} labels",
                n,
                labels.len()
            )));
        }
        for &y in labels {
            if y != T::ZERO && y != T::ONE {
                return Err(Error::numeric("bce_mean: label not in {0, 1}"));
            }
        }
        let inv = T::from_f64(1.0 / n as f64);
        let mut acc = T::ZERO;
        for (&pv, &y) in self.nodes[p].data.iter().zip(labels.iter()) {
            let ph = pv.maxs(eps).mins(T::ONE - eps);
            acc += -(y * ph.ln() + (T::ONE - y) * (T::ONE - ph).ln());
        }
        let needs = self.needs(&[p]);
        self.push(
            vec![1],
            vec![acc * inv],
            Op::BceMean {
                p,
                labels: labels.to_vec(),
                eps,
            },
            needs,
        )
    }

    pub fn mean_all(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.nodes[x].data.len();
        let inv = T::from_f64(1.0 / n as f64);
        let mut acc = T::ZERO;
        for &v in &self.nodes[x].data {
            acc += v;
        }
        let needs = self.needs(&[x]);
        self.push(vec![1], vec![acc * inv], Op::MeanAll { x }, needs)
    }

    pub fn reshape(&mut self, x: NodeId, shape: Vec<usize>) -> Result<NodeId> {
        let numel: usize = shape.iter().product();
        if numel != self.nodes[x].data.len() {
            return Err(Error::shape(format!(
                "reshape {:?} -> {:?}",
                self.nodes[x].shape, shape
            )));
        }
        let data = self.nodes[x].data.clone();
        let needs = self.needs(&[x]);
        self.push(shape, data, Op::Reshape { x }, needs)
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse pass from a scalar node. Leaf gradients accumulate and stay
    /// readable via [`Graph::grad`] / [`Graph::param_grads`].
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if self.nodes[root].data.len() != 1 {
            return Err(Error::shape(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[root].shape
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = (0..n).map(|_| None).collect();
        grads[root] = Some(vec![T::ONE]);

        for i in (0..=root).rev() {
            if !self.nodes[i].needs_grad || grads[i].is_none() {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let g = grads[i].take().unwrap();
            if self.nan_check && !g.iter().all(|v| v.is_finite()) {
                return Err(Error::numeric(format!(
                    "non-finite gradient at {} (node {})",
                    op_name(&self.nodes[i].op),
                    i
                )));
            }
            self.backprop_node(i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn accum(grads: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut Vec<T> {
        grads[id].get_or_insert_with(|| vec![T::ZERO; len])
    }

    fn backprop_node(&self, i: NodeId, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |id: NodeId| nodes[id].needs_grad;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv2d { x, w, geom, cols } => {
                let rows = geom.out_rows();
                let patch = geom.patch_len();
                if wants(*w) {
                    let mut dwmat = vec![T::ZERO; patch * geom.c_out];
                    matmul_at_b_accum(cols, g, rows, patch, geom.c_out, &mut dwmat);
                    let dw = unpack_kernel_grad(&dwmat, geom);
                    let slot = Self::accum(grads, *w, dw.len());
                    for (o, v) in slot.iter_mut().zip(dw.iter()) {
                        *o += *v;
                    }
                }
                if wants(*x) {
                    let wmat = pack_kernel(&nodes[*w].data, geom);
                    let mut dcols = vec![T::ZERO; rows * patch];
                    matmul_b_t(g, &wmat, rows, geom.c_out, patch, &mut dcols);
                    let slot = Self::accum(grads, *x, nodes[*x].data.len());
                    col2im_accum(&dcols, geom, slot);
                }
            }
            Op::Matmul { a, b } => {
                let (m, k) = (nodes[*a].shape[0], nodes[*a].shape[1]);
                let n = nodes[*b].shape[1];
                if wants(*a) {
                    let mut da = vec![T::ZERO; m * k];
                    matmul_b_t(g, &nodes[*b].data, m, n, k, &mut da);
                    let slot = Self::accum(grads, *a, m * k);
                    for (o, v) in slot.iter_mut().zip(da.iter()) {
                        *o += *v;
                    }
                }
                if wants(*b) {
                    let slot = Self::accum(grads, *b, k * n);
                    matmul_at_b_accum(&nodes[*a].data, g, m, k, n, slot);
                }
            }
            Op::BiasRows { x, b } => {
                let n = *nodes[*x].shape.last().unwrap();
                if wants(*x) {
                    let slot = Self::accum(grads, *x, nodes[*x].data.len());
                    for (o, v) in slot.iter_mut().zip(g.iter()) {
                        *o += *v;
                    }
                }
                if wants(*b) {
                    let slot = Self::accum(grads, *b, n);
                    for row in g.chunks(n) {
                        for (o, v) in slot.iter_mut().zip(row.iter()) {
                            *o += *v;
                        }
                    }
                }
            }
            Op::Relu { x } => {
                if wants(*x) {
                    let xd = &nodes[*x].data;
                    let slot = Self::accum(grads, *x, xd.len());
                    for ((o, &gv), &xv) in slot.iter_mut().zip(g.iter()).zip(xd.iter()) {
                        if xv > T::ZERO {
                            *o += gv;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                if wants(*x) {
                    let yd = &nodes[i].data;
                    let slot = Self::accum(grads, *x, yd.len());
                    for ((o, &gv), &y) in slot.iter_mut().zip(g.iter()).zip(yd.iter()) {
                        *o += gv * y * (T::ONE - y);
                    }
                }
            }
            Op::Add { a, b } => {
                for id in [*a, *b] {
                    if wants(id) {
                        let slot = Self::accum(grads, id, nodes[id].data.len());
                        for (o, v) in slot.iter_mut().zip(g.iter()) {
                            *o += *v;
                        }
                    }
                }
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    let bd = &nodes[*b].data;
                    let slot = Self::accum(grads, *a, bd.len());
                    for ((o, &gv), &bv) in slot.iter_mut().zip(g.iter()).zip(bd.iter()) {
                        *o += gv * bv;
                    }
                }
                if wants(*b) {
                    let ad = &nodes[*a].data;
                    let slot = Self::accum(grads, *b, ad.len());
                    for ((o, &gv), &av) in slot.iter_mut().zip(g.iter()).zip(ad.iter()) {
                        *o += gv * av;
                    }
                }
            }
            Op::Scale { x, c } => {
                if wants(*x) {
                    let slot = Self::accum(grads, *x, nodes[*x].data.len());
                    for (o, &gv) in slot.iter_mut().zip(g.iter()) {
                        *o += gv * *c;
                    }
                }
            }
            Op::ColNorm {
                x,
                invstd,
                frozen,
                ..
            } => {
                if !wants(*x) {
                    return;
                }
                let cols = invstd.len();
                let rows = nodes[*x].shape[0];
                let slot = Self::accum(grads, *x, rows * cols);
                if *frozen {
                    for (orow, grow) in slot.chunks_mut(cols).zip(g.chunks(cols)) {
                        for j in 0..cols {
                            orow[j] += grow[j] * invstd[j];
                        }
                    }
                } else {
                    let xhat = &nodes[i].data;
                    let mut gsum = vec![T::ZERO; cols];
                    let mut gxsum = vec![T::ZERO; cols];
                    for (grow, xrow) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for j in 0..cols {
                            gsum[j] += grow[j];
                            gxsum[j] += grow[j] * xrow[j];
                        }
                    }
                    let rowsf = T::from_f64(rows as f64);
                    let inv_rows = T::ONE / rowsf;
                    for ((orow, grow), xrow) in slot
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(xhat.chunks(cols))
                    {
                        for j in 0..cols {
                            orow[j] += invstd[j]
                                * inv_rows
                                * (rowsf * grow[j] - gsum[j] - xrow[j] * gxsum[j]);
                        }
                    }
                }
            }
            Op::RepeatRows { x, times } => {
                if wants(*x) {
                    let c = nodes[*x].shape[1];
                    let slot = Self::accum(grads, *x, nodes[*x].data.len());
                    for (r, grow) in g.chunks(c).enumerate() {
                        let bi = r / times;
                        let orow = &mut slot[bi * c..(bi + 1) * c];
                        for (o, v) in orow.iter_mut().zip(grow.iter()) {
                            *o += *v;
                        }
                    }
                }
            }
            Op::GlobalAvgPool { x } => {
                if wants(*x) {
                    let s = &nodes[*x].shape;
                    let (b, h, w, c) = (s[0], s[1], s[2], s[3]);
                    let inv = T::from_f64(1.0 / (h * w) as f64);
                    let slot = Self::accum(grads, *x, nodes[*x].data.len());
                    for bi in 0..b {
                        let grow = &g[bi * c..(bi + 1) * c];
                        let img = &mut slot[bi * h * w * c..(bi + 1) * h * w * c];
                        for px in img.chunks_mut(c) {
                            for (o, &gv) in px.iter_mut().zip(grow.iter()) {
                                *o += gv * inv;
                            }
                        }
                    }
                }
            }
            Op::RowStats { x, argmin, argmax } => {
                if wants(*x) {
                    let k = nodes[*x].shape[1];
                    let inv = T::from_f64(1.0 / k as f64);
                    let slot = Self::accum(grads, *x, nodes[*x].data.len());
                    for bi in 0..argmin.len() {
                        let gmean = g[bi * 3];
                        let gmin = g[bi * 3 + 1];
                        let gmax = g[bi * 3 + 2];
                        let row = &mut slot[bi * k..(bi + 1) * k];
                        for o in row.iter_mut() {
                            *o += gmean * inv;
                        }
                        row[argmin[bi]] += gmin;
                        row[argmax[bi]] += gmax;
                    }
                }
            }
            Op::ConcatCols { xs } => {
                let b = nodes[i].shape[0];
                let total = nodes[i].shape[1];
                let mut at = 0;
                for &id in xs {
                    let w = nodes[id].shape[1];
                    if wants(id) {
                        let slot = Self::accum(grads, id, nodes[id].data.len());
                        for bi in 0..b {
                            let grow = &g[bi * total + at..bi * total + at + w];
                            let orow = &mut slot[bi * w..(bi + 1) * w];
                            for (o, v) in orow.iter_mut().zip(grow.iter()) {
                                *o += *v;
                            }
                        }
                    }
                    at += w;
                }
            }
            Op::SoftmaxRows { x } => {
                if wants(*x) {
                    let n = nodes[i].shape[1];
                    let s = &nodes[i].data;
                    let slot = Self::accum(grads, *x, s.len());
                    for ((orow, grow), srow) in
                        slot.chunks_mut(n).zip(g.chunks(n)).zip(s.chunks(n))
                    {
                        let mut dot = T::ZERO;
                        for (gv, sv) in grow.iter().zip(srow.iter()) {
                            dot += *gv * *sv;
                        }
                        for j in 0..n {
                            orow[j] += srow[j] * (grow[j] - dot);
                        }
                    }
                }
            }
            Op::MixBranches { probs, alpha } => {
                let nb = probs.len();
                let (b, k) = (nodes[i].shape[0], nodes[i].shape[1]);
                for (bi_idx, &pid) in probs.iter().enumerate() {
                    if wants(pid) {
                        let ad = &nodes[*alpha].data;
                        let slot = Self::accum(grads, pid, b * k);
                        for bi in 0..b {
                            let a = ad[bi * nb + bi_idx];
                            let grow = &g[bi * k..(bi + 1) * k];
                            let orow = &mut slot[bi * k..(bi + 1) * k];
                            for (o, &gv) in orow.iter_mut().zip(grow.iter()) {
                                *o += gv * a;
                            }
                        }
                    }
                }
                if wants(*alpha) {
                    let slot = Self::accum(grads, *alpha, b * nb);
                    for (bi_idx, &pid) in probs.iter().enumerate() {
                        let pd = &nodes[pid].data;
                        for bi in 0..b {
                            let mut dot = T::ZERO;
                            let grow = &g[bi * k..(bi + 1) * k];
                            let prow = &pd[bi * k..(bi + 1) * k];
                            for (&gv, &pv) in grow.iter().zip(prow.iter()) {
                                dot += gv * pv;
                            }
                            slot[bi * nb + bi_idx] += dot;
                        }
                    }
                }
            }
            Op::BceMean { p, labels, eps } => {
                if wants(*p) {
                    let pd = &nodes[*p].data;
                    let inv = T::from_f64(1.0 / pd.len() as f64);
                    let g0 = g[0];
                    let slot = Self::accum(grads, *p, pd.len());
                    for ((o, &pv), &y) in slot.iter_mut().zip(pd.iter()).zip(labels.iter()) {
                        if pv > *eps && pv < T::ONE - *eps {
                            *o += g0 * inv * (pv - y) / (pv * (T::ONE - pv));
                        }
                    }
                }
            }
            Op::MeanAll { x } => {
                if wants(*x) {
                    let len = nodes[*x].data.len();
                    let gv = g[0] * T::from_f64(1.0 / len as f64);
                    let slot = Self::accum(grads, *x, len);
                    for o in slot.iter_mut() {
                        *o += gv;
                    }
                }
            }
            Op::Reshape { x } => {
                if wants(*x) {
                    let slot = Self::accum(grads, *x, nodes[*x].data.len());
                    for (o, v) in slot.iter_mut().zip(g.iter()) {
                        *o += *v;
                    }
                }
            }
        }
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Conv2d { .. } => "conv2d",
        Op::Matmul { .. } => "matmul",
        Op::BiasRows { .. } => "bias_rows",
        Op::Relu { .. } => "relu",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Add { .. } => "add",
        Op::Mul { .. } => "mul",
        Op::Scale { .. } => "scale",
        Op::ColNorm { .. } => "col_norm",
        Op::RepeatRows { .. } => "repeat_rows",
        Op::GlobalAvgPool { .. } => "global_avg_pool",
        Op::RowStats { .. } => "row_stats",
        Op::ConcatCols { .. } => "concat_cols",
        Op::SoftmaxRows { .. } => "softmax_rows",
        Op::MixBranches { .. } => "mix_branches",
        Op::BceMean { .. } => "bce_mean",
        Op::MeanAll { .. } => "mean_all",
        Op::Reshape { .. } => "reshape",
    }
}
