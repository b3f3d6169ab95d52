use super::ModelHyper;
use crate::dogfilter::{branch3_input, Image};
use crate::error::{Error, Result};
use crate::numerics::checkpoint::{
    read_checkpoint, write_checkpoint, TensorRecord, ADAM_PREFIX, ADAM_STATE_NAME,
};
use crate::numerics::init::{constant, fanin_uniform};
use crate::numerics::{
    AdamConfig, AdamState, Dtype, Graph, NodeId, OwnershipTag, ParameterSet, Scalar, Tensor,
};
use std::path::Path;

const CBN_EPS: f64 = 1e-5;
const CBN_MOMENTUM: f64 = 0.1;

/// One training or inference batch in the layouts the graph expects.
#[derive(Debug, Clone)]
pub struct BatchInput<T> {
    /// [B, H, W, 3]
    pub rgb: Tensor<T>,
    /// [B, H, W, 4]; None when branch III is inactive.
    pub b3: Option<Tensor<T>>,
    /// [B*K, 3] point rows, K points per sample.
    pub points: Tensor<T>,
    pub batch: usize,
    pub k: usize,
}

impl<T: Scalar> BatchInput<T> {
    /// Build from channel-major images and per-sample point lists, running
    /// the difference-of-Gaussians preprocessing for branch III.
    pub fn from_images(
        hyper: &ModelHyper,
        images: &[&Image],
        points: &[Vec<[f64; 3]>],
        with_b3: bool,
    ) -> Result<Self> {
        if images.is_empty() || images.len() != points.len() {
            return Err(Error::shape("batch needs one point set per image"));
        }
        let b = images.len();
        let k = points[0].len();
        if k == 0 {
            return Err(Error::shape("empty point set"));
        }
        let (h, w) = (images[0].height, images[0].width);
        let mut rgb = vec![T::ZERO; b * h * w * 3];
        let mut b3 = if with_b3 {
            Some(vec![T::ZERO; b * h * w * 4])
        } else {
            None
        };
        for (bi, img) in images.iter().enumerate() {
            if img.channels != 3 || img.height != h || img.width != w {
                return Err(Error::shape("batch images must share a 3xHxW layout"));
            }
            chw_into_nhwc(&img.data, 3, h, w, &mut rgb[bi * h * w * 3..(bi + 1) * h * w * 3]);
            if let Some(out) = b3.as_mut() {
                let four = branch3_input(img, &hyper.scale_spec())?;
                chw_into_nhwc(
                    &four.data,
                    4,
                    h,
                    w,
                    &mut out[bi * h * w * 4..(bi + 1) * h * w * 4],
                );
            }
        }
        let mut pts = Vec::with_capacity(b * k * 3);
        for ps in points {
            if ps.len() != k {
                return Err(Error::shape("point sets must share one K"));
            }
            for p in ps {
                pts.extend_from_slice(&[
                    T::from_f64(p[0]),
                    T::from_f64(p[1]),
                    T::from_f64(p[2]),
                ]);
            }
        }
        Ok(BatchInput {
            rgb: Tensor::new(vec![b, h, w, 3], rgb)?,
            b3: match b3 {
                Some(d) => Some(Tensor::new(vec![b, h, w, 4], d)?),
                None => None,
            },
            points: Tensor::new(vec![b * k, 3], pts)?,
            batch: b,
            k,
        })
    }
}

fn chw_into_nhwc<T: Scalar>(src: &[f64], c: usize, h: usize, w: usize, dst: &mut [T]) {
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                dst[(y * w + x) * c + ci] = T::from_f64(src[(ci * h + y) * w + x]);
            }
        }
    }
}

/// Graph handles produced by one forward pass.
pub struct ForwardNodes {
    /// Per active branch, each [B, K].
    pub logits: Vec<NodeId>,
    pub probs: Vec<NodeId>,
    /// [B, n_branches]; None when only the main branch ran.
    pub alpha: Option<NodeId>,
    /// [B, K] fused probability.
    pub mixed: NodeId,
    /// [B, F] image embedding.
    pub z: NodeId,
}

/// Deferred running-statistic updates collected during a training forward.
pub struct ForwardPass {
    pub nodes: ForwardNodes,
    updates: Vec<(String, Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOpts {
    /// Skip the side branches entirely (the fused output is the main branch).
    pub main_only: bool,
    /// Replace the gate output with fixed weights over the active branches.
    pub force_alpha: Option<Vec<f64>>,
}

/// Per-branch probabilities, mixture weights and the fused prediction for
/// one batch, in plain f64.
#[derive(Debug, Clone)]
pub struct BranchOutputs {
    /// [n_branches][B*K]
    pub probs: Vec<Vec<f64>>,
    pub logits: Vec<Vec<f64>>,
    /// [B][n_branches]
    pub alpha: Vec<Vec<f64>>,
    /// [B*K]
    pub mixed: Vec<f64>,
    pub batch: usize,
    pub k: usize,
}

impl BranchOutputs {
    /// Mixture weights are a convex combination and the fused value stays
    /// inside the per-point envelope of the branch probabilities.
    pub fn validate(&self) -> Result<()> {
        for row in &self.alpha {
            let mut sum = 0.0;
            for &a in row {
                if a < 0.0 {
                    return Err(Error::numeric("negative mixture weight"));
                }
                sum += a;
            }
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::numeric(format!("mixture weights sum to {sum}")));
            }
        }
        for bi in 0..self.batch {
            for j in 0..self.k {
                let at = bi * self.k + j;
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for p in &self.probs {
                    lo = lo.min(p[at]);
                    hi = hi.max(p[at]);
                }
                let m = self.mixed[at];
                if m < lo - 1e-9 || m > hi + 1e-9 {
                    return Err(Error::numeric(format!(
                        "fused probability {m} escapes branch envelope [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// The model: hyperparameters plus named parameters.
#[derive(Debug, Clone)]
pub struct DmifNet<T> {
    pub hyper: ModelHyper,
    pub params: ParameterSet<T>,
}

pub enum LoadedModel {
    F32(Box<DmifNet<f32>>, Option<AdamState<f32>>),
    F64(Box<DmifNet<f64>>, Option<AdamState<f64>>),
}

impl<T: Scalar> DmifNet<T> {
    pub fn new(hyper: ModelHyper, seed: u64) -> Result<Self> {
        hyper.validate()?;
        let mut params = ParameterSet::new();
        build_params(&hyper, seed, &mut params);
        Ok(DmifNet { hyper, params })
    }

    pub fn n_branches(&self) -> usize {
        self.hyper.variant.branches()
    }

    /// Forward pass. Training mode (graph.training) uses batch statistics in
    /// every conditional batch norm and returns the pending running-stat
    /// updates; apply them with [`DmifNet::apply_updates`] after the step.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        input: &BatchInput<T>,
        opts: &ForwardOpts,
    ) -> Result<ForwardPass> {
        let (b, k) = (input.batch, input.k);
        let hw = self.hyper.image_size;
        if input.rgb.shape() != [b, hw, hw, 3] {
            return Err(Error::shape(format!(
                "expected [{b},{hw},{hw},3] images, got {:?}",
                input.rgb.shape()
            )));
        }
        if g.training && b < 2 {
            return Err(Error::numeric(
                "training forward needs batch size >= 2 (batch statistics)",
            ));
        }
        let mut updates = Vec::new();
        let nb = if opts.main_only {
            1
        } else {
            self.hyper.variant.branches()
        };
        if let Some(fa) = &opts.force_alpha {
            if fa.len() != nb {
                return Err(Error::shape(format!(
                    "forced alpha has {} weights for {} active branches",
                    fa.len(),
                    nb
                )));
            }
        }

        let x = g.input(input.rgb.shape().to_vec(), input.rgb.data().to_vec())?;
        let (stages, z) = self.encode_trunk(g, "enc", x)?;
        let pts = g.input(input.points.shape().to_vec(), input.points.data().to_vec())?;

        let mut logits = Vec::with_capacity(nb);
        let mut probs = Vec::with_capacity(nb);
        let (lg, pr) = self.decode(g, 0, z, pts, b, k, &mut updates)?;
        logits.push(lg);
        probs.push(pr);

        if nb >= 3 {
            for (branch, stage) in [(1usize, stages[1]), (2usize, stages[2])] {
                let tap = g.global_avg_pool(stage)?;
                let cond = self.project(g, &format!("proj.b{branch}"), tap)?;
                let (lg, pr) = self.decode(g, branch, cond, pts, b, k, &mut updates)?;
                logits.push(lg);
                probs.push(pr);
            }
        }
        if nb == 4 {
            let b3 = input
                .b3
                .as_ref()
                .ok_or_else(|| Error::shape("branch III input missing from batch"))?;
            let xb3 = g.input(b3.shape().to_vec(), b3.data().to_vec())?;
            let (_, z3) = self.encode_trunk(g, "b3enc", xb3)?;
            let cond = self.project(g, "proj.b3", z3)?;
            let (lg, pr) = self.decode(g, 3, cond, pts, b, k, &mut updates)?;
            logits.push(lg);
            probs.push(pr);
        }

        let (alpha, mixed) = if nb == 1 {
            (None, probs[0])
        } else {
            let alpha = match &opts.force_alpha {
                Some(fa) => {
                    let mut data = Vec::with_capacity(b * nb);
                    for _ in 0..b {
                        data.extend(fa.iter().map(|&a| T::from_f64(a)));
                    }
                    g.input(vec![b, nb], data)?
                }
                None => {
                    if self.hyper.variant.gated() {
                        self.gate(g, &probs, z, b)?
                    } else {
                        let u = T::from_f64(1.0 / nb as f64);
                        g.input(vec![b, nb], vec![u; b * nb])?
                    }
                }
            };
            let mixed = g.mix_branches(&probs, alpha)?;
            (Some(alpha), mixed)
        };

        Ok(ForwardPass {
            nodes: ForwardNodes {
                logits,
                probs,
                alpha,
                mixed,
                z,
            },
            updates,
        })
    }

    /// Fold the running-statistic updates from a training forward back into
    /// the parameter buffers.
    pub fn apply_updates(&mut self, pass: &ForwardPass) -> Result<()> {
        for (prefix, mean, var) in &pass.updates {
            for (suffix, fresh) in [("rm", mean), ("rv", var)] {
                let p = self.params.get_mut(&format!("{prefix}.{suffix}"))?;
                for (r, &v) in p.value.data_mut().iter_mut().zip(fresh.iter()) {
                    let old = r.to_f64();
                    *r = T::from_f64((1.0 - CBN_MOMENTUM) * old + CBN_MOMENTUM * v);
                }
            }
        }
        Ok(())
    }

    /// Inference on explicit images/points; returns plain-f64 branch outputs.
    pub fn predict(
        &self,
        images: &[&Image],
        points: &[Vec<[f64; 3]>],
        opts: &ForwardOpts,
    ) -> Result<BranchOutputs> {
        let input = BatchInput::from_images(
            &self.hyper,
            images,
            points,
            self.hyper.variant.branches() == 4 && !opts.main_only,
        )?;
        let mut g: Graph<T> = Graph::inference();
        let pass = self.forward(&mut g, &input, opts)?;
        Ok(self.collect(&g, &pass.nodes, input.batch, input.k))
    }

    pub fn collect(&self, g: &Graph<T>, nodes: &ForwardNodes, b: usize, k: usize) -> BranchOutputs {
        let to64 = |id: NodeId| g.value(id).iter().map(|v| v.to_f64()).collect::<Vec<f64>>();
        let nb = nodes.probs.len();
        let alpha = match nodes.alpha {
            Some(id) => {
                let flat = to64(id);
                (0..b).map(|bi| flat[bi * nb..(bi + 1) * nb].to_vec()).collect()
            }
            None => vec![vec![1.0]; b],
        };
        BranchOutputs {
            probs: nodes.probs.iter().map(|&id| to64(id)).collect(),
            logits: nodes.logits.iter().map(|&id| to64(id)).collect(),
            alpha,
            mixed: to64(nodes.mixed),
            batch: b,
            k,
        }
    }

    // ---- submodules ------------------------------------------------------

    /// Stem + four stride-2 residual stages; returns stage activations and
    /// the pooled embedding of the last stage.
    fn encode_trunk(
        &self,
        g: &mut Graph<T>,
        prefix: &str,
        x: NodeId,
    ) -> Result<(Vec<NodeId>, NodeId)> {
        let w = g.param(&self.params, &format!("{prefix}.stem.w"))?;
        let bb = g.param(&self.params, &format!("{prefix}.stem.b"))?;
        let h = g.conv2d(x, w, 1, 1)?;
        let h = g.bias_rows(h, bb)?;
        let mut h = g.relu(h)?;
        let mut stages = Vec::with_capacity(4);
        for i in 1..=4 {
            let w = g.param(&self.params, &format!("{prefix}.s{i}.down.w"))?;
            let bb = g.param(&self.params, &format!("{prefix}.s{i}.down.b"))?;
            let d = g.conv2d(h, w, 2, 1)?;
            let d = g.bias_rows(d, bb)?;
            let d = g.relu(d)?;
            let w1 = g.param(&self.params, &format!("{prefix}.s{i}.c1.w"))?;
            let b1 = g.param(&self.params, &format!("{prefix}.s{i}.c1.b"))?;
            let w2 = g.param(&self.params, &format!("{prefix}.s{i}.c2.w"))?;
            let b2 = g.param(&self.params, &format!("{prefix}.s{i}.c2.b"))?;
            let r = g.conv2d(d, w1, 1, 1)?;
            let r = g.bias_rows(r, b1)?;
            let r = g.relu(r)?;
            let r = g.conv2d(r, w2, 1, 1)?;
            let r = g.bias_rows(r, b2)?;
            let s = g.add(d, r)?;
            h = g.relu(s)?;
            stages.push(h);
        }
        let z = g.global_avg_pool(stages[3])?;
        Ok((stages, z))
    }

    /// Linear projection of a pooled tap onto the conditioning width.
    fn project(&self, g: &mut Graph<T>, prefix: &str, x: NodeId) -> Result<NodeId> {
        let w = g.param(&self.params, &format!("{prefix}.w"))?;
        let bb = g.param(&self.params, &format!("{prefix}.b"))?;
        let y = g.matmul(x, w)?;
        g.bias_rows(y, bb)
    }

    /// Conditional batch norm over point rows: normalize per feature over all
    /// rows, then scale/shift by affine images of the conditioning vector.
    #[allow(clippy::too_many_arguments)]
    fn cbn(
        &self,
        g: &mut Graph<T>,
        prefix: &str,
        x: NodeId,
        cond: NodeId,
        k: usize,
        updates: &mut Vec<(String, Vec<f64>, Vec<f64>)>,
    ) -> Result<NodeId> {
        let eps = T::from_f64(CBN_EPS);
        let xn = if g.training {
            let xn = g.col_norm(x, eps, None)?;
            let (mean, var) = g
                .col_norm_batch_stats(xn)
                .ok_or_else(|| Error::numeric("missing batch statistics"))?;
            let rows = g.shape(x)[0] as f64;
            // Unbiased variance goes into the running estimate.
            let corr = rows / (rows - 1.0);
            let mean64: Vec<f64> = mean.iter().map(|v| v.to_f64()).collect();
            let var64: Vec<f64> = var.iter().map(|v| v.to_f64() * corr).collect();
            updates.push((prefix.to_string(), mean64, var64));
            xn
        } else {
            let rm = self.params.get(&format!("{prefix}.rm"))?.value.data().to_vec();
            let rv = self.params.get(&format!("{prefix}.rv"))?.value.data().to_vec();
            g.col_norm(x, eps, Some((&rm, &rv)))?
        };
        let sw = g.param(&self.params, &format!("{prefix}.sw"))?;
        let sb = g.param(&self.params, &format!("{prefix}.sb"))?;
        let hw = g.param(&self.params, &format!("{prefix}.hw"))?;
        let hb = g.param(&self.params, &format!("{prefix}.hb"))?;
        let gamma = g.matmul(cond, sw)?;
        let gamma = g.bias_rows(gamma, sb)?;
        let beta = g.matmul(cond, hw)?;
        let beta = g.bias_rows(beta, hb)?;
        let ge = g.repeat_rows(gamma, k)?;
        let be = g.repeat_rows(beta, k)?;
        let scaled = g.mul(xn, ge)?;
        g.add(scaled, be)
    }

    /// Per-point decoder: input lift, residual blocks of
    /// cbn-relu-fc-cbn-relu-fc with skip, then a conditioned head.
    #[allow(clippy::too_many_arguments)]
    fn decode(
        &self,
        g: &mut Graph<T>,
        branch: usize,
        cond: NodeId,
        pts: NodeId,
        b: usize,
        k: usize,
        updates: &mut Vec<(String, Vec<f64>, Vec<f64>)>,
    ) -> Result<(NodeId, NodeId)> {
        if k == 0 {
            return Err(Error::shape("decoder needs a non-empty point set"));
        }
        let p = format!("dec{branch}");
        let w = g.param(&self.params, &format!("{p}.fc_in.w"))?;
        let bb = g.param(&self.params, &format!("{p}.fc_in.b"))?;
        let h0 = g.matmul(pts, w)?;
        let mut h = g.bias_rows(h0, bb)?;
        for j in 0..self.hyper.dec_blocks {
            let t = self.cbn(g, &format!("{p}.blk{j}.cbn1"), h, cond, k, updates)?;
            let t = g.relu(t)?;
            let w1 = g.param(&self.params, &format!("{p}.blk{j}.fc1.w"))?;
            let b1 = g.param(&self.params, &format!("{p}.blk{j}.fc1.b"))?;
            let t = g.matmul(t, w1)?;
            let t = g.bias_rows(t, b1)?;
            let t = self.cbn(g, &format!("{p}.blk{j}.cbn2"), t, cond, k, updates)?;
            let t = g.relu(t)?;
            let w2 = g.param(&self.params, &format!("{p}.blk{j}.fc2.w"))?;
            let b2 = g.param(&self.params, &format!("{p}.blk{j}.fc2.b"))?;
            let t = g.matmul(t, w2)?;
            let t = g.bias_rows(t, b2)?;
            h = g.add(h, t)?;
        }
        let t = self.cbn(g, &format!("{p}.out.cbn"), h, cond, k, updates)?;
        let t = g.relu(t)?;
        let w = g.param(&self.params, &format!("{p}.out.fc.w"))?;
        let bb = g.param(&self.params, &format!("{p}.out.fc.b"))?;
        let y = g.matmul(t, w)?;
        let y = g.bias_rows(y, bb)?;
        let logits = g.reshape(y, vec![b, k])?;
        let probs = g.sigmoid(logits)?;
        Ok((logits, probs))
    }

    /// Gate: per-branch summary statistics of the probabilities plus the
    /// image embedding, through a small MLP, normalized by softmax.
    fn gate(&self, g: &mut Graph<T>, probs: &[NodeId], z: NodeId, _b: usize) -> Result<NodeId> {
        let mut feats = Vec::with_capacity(probs.len() + 1);
        for &p in probs {
            feats.push(g.row_stats(p)?);
        }
        feats.push(z);
        let gin = g.concat_cols(&feats)?;
        let w1 = g.param(&self.params, "gate.fc1.w")?;
        let b1 = g.param(&self.params, "gate.fc1.b")?;
        let h = g.matmul(gin, w1)?;
        let h = g.bias_rows(h, b1)?;
        let h = g.relu(h)?;
        let w2 = g.param(&self.params, "gate.fc2.w")?;
        let b2 = g.param(&self.params, "gate.fc2.b")?;
        let s = g.matmul(h, w2)?;
        let s = g.bias_rows(s, b2)?;
        g.softmax_rows(s)
    }

    // ---- persistence -----------------------------------------------------

    pub fn save(&self, path: &Path, adam: Option<&AdamState<T>>) -> Result<()> {
        let meta = serde_json::to_string(&self.hyper)?;
        let mut records = Vec::with_capacity(self.params.len());
        for p in self.params.iter() {
            records.push(TensorRecord::new(
                p.name.clone(),
                T::DTYPE,
                p.value.shape().to_vec(),
                p.value.to_f64_vec(),
            ));
        }
        if let Some(adam) = adam {
            for (idx, p) in self.params.iter().enumerate() {
                if !p.trainable {
                    continue;
                }
                let (m, v) = adam.moments(idx);
                records.push(TensorRecord::new(
                    format!("{ADAM_PREFIX}m/{}", p.name),
                    T::DTYPE,
                    p.value.shape().to_vec(),
                    m.iter().map(|x| x.to_f64()).collect(),
                ));
                records.push(TensorRecord::new(
                    format!("{ADAM_PREFIX}v/{}", p.name),
                    T::DTYPE,
                    p.value.shape().to_vec(),
                    v.iter().map(|x| x.to_f64()).collect(),
                ));
            }
            records.push(TensorRecord::new(
                ADAM_STATE_NAME,
                Dtype::F64,
                vec![5],
                vec![
                    adam.step as f64,
                    adam.cfg.lr,
                    adam.cfg.beta1,
                    adam.cfg.beta2,
                    adam.cfg.eps,
                ],
            ));
        }
        write_checkpoint(path, &meta, &records)
    }

    fn restore(hyper: ModelHyper, records: &[TensorRecord]) -> Result<(Self, Option<AdamState<T>>)> {
        let mut model = DmifNet::<T>::new(hyper, 0)?;
        let mut seen = 0usize;
        let mut adam_state: Option<AdamState<T>> = None;
        let mut adam_records = Vec::new();
        for r in records {
            if r.name == ADAM_STATE_NAME {
                if r.data.len() != 5 {
                    return Err(Error::format("malformed optimizer state"));
                }
                let mut st = AdamState::new(
                    &model.params,
                    AdamConfig {
                        lr: r.data[1],
                        beta1: r.data[2],
                        beta2: r.data[3],
                        eps: r.data[4],
                    },
                );
                st.step = r.data[0] as u64;
                adam_state = Some(st);
                continue;
            }
            if let Some(rest) = r.name.strip_prefix(ADAM_PREFIX) {
                adam_records.push((rest.to_string(), r));
                continue;
            }
            let p = model.params.get_mut(&r.name).map_err(|_| {
                Error::format(format!("checkpoint holds unknown parameter {}", r.name))
            })?;
            if p.value.shape() != r.shape.as_slice() {
                return Err(Error::format(format!(
                    "parameter {} has shape {:?}, checkpoint {:?}",
                    r.name,
                    p.value.shape(),
                    r.shape
                )));
            }
            for (dst, &v) in p.value.data_mut().iter_mut().zip(r.data.iter()) {
                *dst = T::from_f64(v);
            }
            seen += 1;
        }
        if seen != model.params.len() {
            return Err(Error::format(format!(
                "checkpoint holds {seen} of {} parameters",
                model.params.len()
            )));
        }
        if let Some(st) = adam_state.as_mut() {
            for (rest, r) in adam_records {
                let (which, pname) = rest
                    .split_once('/')
                    .ok_or_else(|| Error::format(format!("bad optimizer record {rest}")))?;
                let idx = model
                    .params
                    .index(pname)
                    .ok_or_else(|| Error::format(format!("optimizer state for unknown {pname}")))?;
                let (m, v) = st.moments_mut(idx);
                let dst = match which {
                    "m" => m,
                    "v" => v,
                    _ => return Err(Error::format(format!("bad optimizer record {rest}"))),
                };
                *dst = r.data.iter().map(|&x| T::from_f64(x)).collect();
            }
        }
        Ok((model, adam_state))
    }
}

/// Load a checkpoint, dispatching on the stored precision.
pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let (meta, records) = read_checkpoint(path)?;
    let hyper: ModelHyper = serde_json::from_str(&meta)?;
    match hyper.precision.as_str() {
        "f32" => {
            let (m, a) = DmifNet::<f32>::restore(hyper, &records)?;
            Ok(LoadedModel::F32(Box::new(m), a))
        }
        _ => {
            let (m, a) = DmifNet::<f64>::restore(hyper, &records)?;
            Ok(LoadedModel::F64(Box::new(m), a))
        }
    }
}

impl LoadedModel {
    pub fn hyper(&self) -> &ModelHyper {
        match self {
            LoadedModel::F32(m, _) => &m.hyper,
            LoadedModel::F64(m, _) => &m.hyper,
        }
    }
}

// ---- parameter construction ----------------------------------------------

fn build_params<T: Scalar>(hyper: &ModelHyper, seed: u64, ps: &mut ParameterSet<T>) {
    use OwnershipTag::*;
    let nb = hyper.variant.branches();
    let enc_tag = |stage: usize| -> OwnershipTag {
        if nb == 1 {
            return MainExclusive;
        }
        // Stages 1-2 feed main + both taps; stage 3 feeds main + branch II.
        match stage {
            0..=2 => SharedPath,
            3 => SharedPath,
            _ => MainExclusive,
        }
    };
    // Stage 4 is used by the main head only.
    let trunk = |ps: &mut ParameterSet<T>, prefix: &str, in_ch: usize, stem: usize, stages: [usize; 4], tag_of: &dyn Fn(usize) -> OwnershipTag| {
        conv(ps, seed, &format!("{prefix}.stem"), stem, in_ch, tag_of(0));
        let mut prev = stem;
        for (i, &ch) in stages.iter().enumerate() {
            let tag = tag_of(i + 1);
            conv(ps, seed, &format!("{prefix}.s{}.down", i + 1), ch, prev, tag);
            conv(ps, seed, &format!("{prefix}.s{}.c1", i + 1), ch, ch, tag);
            conv(ps, seed, &format!("{prefix}.s{}.c2", i + 1), ch, ch, tag);
            prev = ch;
        }
    };

    let enc_tag_of = |stage: usize| -> OwnershipTag {
        if stage <= 3 {
            enc_tag(stage)
        } else {
            MainExclusive
        }
    };
    trunk(ps, "enc", 3, hyper.enc_stem, hyper.enc_stages, &enc_tag_of);

    decoder(ps, seed, hyper, 0, MainExclusive);
    if nb >= 3 {
        linear(
            ps,
            seed,
            "proj.b1",
            hyper.enc_stages[1],
            hyper.feat_dim,
            SideExclusive(1),
        );
        decoder(ps, seed, hyper, 1, SideExclusive(1));
        linear(
            ps,
            seed,
            "proj.b2",
            hyper.enc_stages[2],
            hyper.feat_dim,
            SideExclusive(2),
        );
        decoder(ps, seed, hyper, 2, SideExclusive(2));
    }
    if nb == 4 {
        let b3_tag_of = |_stage: usize| -> OwnershipTag { SideExclusive(3) };
        trunk(ps, "b3enc", 4, hyper.b3_stem, hyper.b3_stages, &b3_tag_of);
        linear(
            ps,
            seed,
            "proj.b3",
            hyper.b3_stages[3],
            hyper.feat_dim,
            SideExclusive(3),
        );
        decoder(ps, seed, hyper, 3, SideExclusive(3));
    }
    if nb > 1 && hyper.variant.gated() {
        let gin = 3 * nb + hyper.feat_dim;
        linear(ps, seed, "gate.fc1", gin, hyper.gate_hidden, MainExclusive);
        linear(ps, seed, "gate.fc2", hyper.gate_hidden, nb, MainExclusive);
    }
}

fn conv<T: Scalar>(
    ps: &mut ParameterSet<T>,
    seed: u64,
    prefix: &str,
    c_out: usize,
    c_in: usize,
    tag: OwnershipTag,
) {
    let name = format!("{prefix}.w");
    ps.insert(
        &name,
        fanin_uniform(seed, &name, vec![c_out, c_in, 3, 3], c_in * 9),
        tag,
        true,
    );
    ps.insert(&format!("{prefix}.b"), constant(vec![c_out], 0.0), tag, true);
}

fn linear<T: Scalar>(
    ps: &mut ParameterSet<T>,
    seed: u64,
    prefix: &str,
    d_in: usize,
    d_out: usize,
    tag: OwnershipTag,
) {
    let name = format!("{prefix}.w");
    ps.insert(
        &name,
        fanin_uniform(seed, &name, vec![d_in, d_out], d_in),
        tag,
        true,
    );
    ps.insert(&format!("{prefix}.b"), constant(vec![d_out], 0.0), tag, true);
}

/// Conditional batch norm block: small-weight affine maps so gamma starts
/// near 1 and beta near 0 while the conditioning vector already matters,
/// plus running-statistic buffers.
fn cbn_params<T: Scalar>(
    ps: &mut ParameterSet<T>,
    seed: u64,
    prefix: &str,
    feat: usize,
    width: usize,
    tag: OwnershipTag,
) {
    let small = |name: &str| {
        let mut t = fanin_uniform::<T>(seed, name, vec![feat, width], feat * 25);
        t.requires_grad = false;
        t
    };
    let sw = format!("{prefix}.sw");
    let hw = format!("{prefix}.hw");
    ps.insert(&sw, small(&sw), tag, true);
    ps.insert(&format!("{prefix}.sb"), constant(vec![width], 1.0), tag, true);
    ps.insert(&hw, small(&hw), tag, true);
    ps.insert(&format!("{prefix}.hb"), constant(vec![width], 0.0), tag, true);
    ps.insert(&format!("{prefix}.rm"), constant(vec![width], 0.0), tag, false);
    ps.insert(&format!("{prefix}.rv"), constant(vec![width], 1.0), tag, false);
}

fn decoder<T: Scalar>(
    ps: &mut ParameterSet<T>,
    seed: u64,
    hyper: &ModelHyper,
    branch: usize,
    tag: OwnershipTag,
) {
    let p = format!("dec{branch}");
    let (f, w) = (hyper.feat_dim, hyper.dec_width);
    linear(ps, seed, &format!("{p}.fc_in"), 3, w, tag);
    for j in 0..hyper.dec_blocks {
        cbn_params(ps, seed, &format!("{p}.blk{j}.cbn1"), f, w, tag);
        linear(ps, seed, &format!("{p}.blk{j}.fc1"), w, w, tag);
        cbn_params(ps, seed, &format!("{p}.blk{j}.cbn2"), f, w, tag);
        linear(ps, seed, &format!("{p}.blk{j}.fc2"), w, w, tag);
    }
    cbn_params(ps, seed, &format!("{p}.out.cbn"), f, w, tag);
    linear(ps, seed, &format!("{p}.out.fc"), w, 1, tag);
}
