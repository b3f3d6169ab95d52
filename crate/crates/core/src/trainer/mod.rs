//! Joint multi-branch training: the summed cross-entropy loss over the fused
//! prediction and each side branch, Adam updates, checkpointing, JSON-lines
//! logging, and the ablation variants.

pub mod data;

use crate::error::{Error, Result};
use crate::model::{DmifNet, ForwardNodes, ForwardOpts, ModelHyper, Variant};
use crate::numerics::{AdamConfig, AdamState, Graph, NodeId, OwnershipTag, Scalar};
use crate::synthdata::Dataset;
use data::{assemble, epoch_batches, load_split};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const PROB_EPS: f64 = 1e-7;

/// Which probability the main loss term reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MainTerm {
    /// Cross-entropy on the fused probability (the gate receives gradient).
    #[default]
    Mixed,
    /// Cross-entropy on the raw main-branch probability.
    MainBranch,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default = "one")]
    pub main: f64,
    #[serde(default = "three_ones")]
    pub side: Vec<f64>,
}

fn one() -> f64 {
    1.0
}
fn three_ones() -> Vec<f64> {
    vec![1.0, 1.0, 1.0]
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            main: 1.0,
            side: three_ones(),
        }
    }
}

fn d_batch() -> usize {
    8
}
fn d_points() -> usize {
    256
}
fn d_epochs() -> usize {
    5
}
fn d_lr() -> f64 {
    0.004
}
fn d_seed() -> u64 {
    1
}
fn d_ckpt_every() -> usize {
    500
}
fn d_log_every() -> usize {
    10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Dataset directory (holds manifest.jsonl).
    pub data: String,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Points drawn per sample per step from the stored set.
    #[serde(default = "d_points")]
    pub points_per_step: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Hard cap on optimization steps (handy for short runs); 0 = no cap.
    #[serde(default)]
    pub max_steps: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default = "d_ckpt_every")]
    pub checkpoint_every: usize,
    #[serde(default = "d_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub main_term: MainTerm,
    #[serde(default)]
    pub model: ModelHyper,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::config("batch_size must be at least 2"));
        }
        if self.points_per_step == 0 || self.epochs == 0 {
            return Err(Error::config("points_per_step and epochs must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning_rate must be positive"));
        }
        self.model.validate()
    }
}

/// Graph nodes of the per-term losses plus the weighted total.
pub struct LossNodes {
    pub total: NodeId,
    pub main: NodeId,
    pub sides: Vec<NodeId>,
}

/// Assemble the joint loss: one cross-entropy term on the fused (or raw
/// main) probability plus one per side branch on its own probability, each
/// averaged over batch and points, then weighted and summed.
pub fn build_loss<T: Scalar>(
    g: &mut Graph<T>,
    nodes: &ForwardNodes,
    labels: &[T],
    weights: &LossWeights,
    main_term: MainTerm,
) -> Result<LossNodes> {
    let eps = T::from_f64(PROB_EPS);
    let main_src = match main_term {
        MainTerm::Mixed => nodes.mixed,
        MainTerm::MainBranch => nodes.probs[0],
    };
    let main = g.bce_mean(main_src, labels, eps)?;
    let mut sides = Vec::with_capacity(nodes.probs.len().saturating_sub(1));
    for &p in nodes.probs.iter().skip(1) {
        sides.push(g.bce_mean(p, labels, eps)?);
    }
    let mut total = g.scale(main, T::from_f64(weights.main))?;
    for (i, &s) in sides.iter().enumerate() {
        let w = weights.side.get(i).copied().unwrap_or(1.0);
        let ws = g.scale(s, T::from_f64(w))?;
        total = g.add(total, ws)?;
    }
    Ok(LossNodes { total, main, sides })
}

/// Decomposition check of Eq-style joint optimization: for every parameter,
/// the gradient of the total loss must equal the sum of the per-term
/// gradients; shared-path parameters collect contributions from several
/// terms at once.
#[derive(Debug, Clone, Serialize)]
pub struct GradientReportEntry {
    pub name: String,
    pub tag: String,
    pub total_norm: f64,
    pub main_norm: f64,
    pub side_norms: Vec<f64>,
    pub max_decomposition_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientReport {
    pub entries: Vec<GradientReportEntry>,
}

impl GradientReport {
    pub fn shared_path(&self) -> impl Iterator<Item = &GradientReportEntry> {
        self.entries.iter().filter(|e| e.tag == "shared-path")
    }

    pub fn max_decomposition_err(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.max_decomposition_err)
            .fold(0.0, f64::max)
    }
}

fn tag_name(tag: OwnershipTag) -> String {
    match tag {
        OwnershipTag::MainExclusive => "main-exclusive".into(),
        OwnershipTag::SideExclusive(n) => format!("side-{n}-exclusive"),
        OwnershipTag::SharedPath => "shared-path".into(),
    }
}

/// Run backward once per loss term and once for the total on the same
/// forward graph, then compare per-parameter gradients.
pub fn shared_path_report<T: Scalar>(
    model: &DmifNet<T>,
    input: &crate::model::BatchInput<T>,
    labels: &[T],
    weights: &LossWeights,
    main_term: MainTerm,
) -> Result<GradientReport> {
    let mut g: Graph<T> = Graph::new(true);
    let pass = model.forward(&mut g, input, &ForwardOpts::default())?;
    let loss = build_loss(&mut g, &pass.nodes, labels, weights, main_term)?;

    let collect = |g: &Graph<T>| -> std::collections::HashMap<usize, Vec<f64>> {
        g.param_grads()
            .map(|(idx, gr)| (idx, gr.iter().map(|v| v.to_f64()).collect()))
            .collect()
    };
    g.backward(loss.total)?;
    let total = collect(&g);
    g.backward(loss.main)?;
    let main = collect(&g);
    let mut side_grads = Vec::new();
    for &s in &loss.sides {
        g.backward(s)?;
        side_grads.push(collect(&g));
    }

    let norm = |v: Option<&Vec<f64>>| -> f64 {
        v.map(|g| g.iter().map(|x| x * x).sum::<f64>().sqrt()).unwrap_or(0.0)
    };
    let mut entries = Vec::new();
    for (idx, tgrad) in total.iter() {
        let p = model.params.at(*idx);
        let mut max_err = 0.0f64;
        for (j, &tv) in tgrad.iter().enumerate() {
            let mut sum = weights.main * main.get(idx).map(|g| g[j]).unwrap_or(0.0);
            for (si, sg) in side_grads.iter().enumerate() {
                let w = weights.side.get(si).copied().unwrap_or(1.0);
                sum += w * sg.get(idx).map(|g| g[j]).unwrap_or(0.0);
            }
            max_err = max_err.max((tv - sum).abs());
        }
        entries.push(GradientReportEntry {
            name: p.name.clone(),
            tag: tag_name(p.tag),
            total_norm: norm(Some(tgrad)),
            main_norm: norm(main.get(idx)),
            side_norms: side_grads.iter().map(|sg| norm(sg.get(idx))).collect(),
            max_decomposition_err: max_err,
        });
    }
    entries.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(GradientReport { entries })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub final_checkpoint: PathBuf,
    pub steps: u64,
    pub final_loss: f64,
}

/// Train from a config, dispatching on the configured precision.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    match cfg.model.precision.as_str() {
        "f32" => train_typed::<f32>(dataset, cfg, out_dir),
        _ => train_typed::<f64>(dataset, cfg, out_dir),
    }
}

/// Train the named reduced model for the ablation study.
pub fn ablate(
    dataset: &Dataset,
    cfg: &TrainConfig,
    variant: Variant,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    let mut cfg = cfg.clone();
    cfg.model.variant = variant;
    train(dataset, &cfg, out_dir)
}

fn train_typed<T: Scalar>(dataset: &Dataset, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let mut model = DmifNet::<T>::new(cfg.model.clone(), cfg.seed)?;
    let with_b3 = model.n_branches() == 4;
    let data = load_split(dataset, "train", &cfg.model, with_b3)?;
    if cfg.points_per_step > data.k_stored {
        return Err(Error::config(format!(
            "points_per_step {} exceeds the {} stored points per sample",
            cfg.points_per_step, data.k_stored
        )));
    }
    let mut adam = AdamState::new(
        &model.params,
        AdamConfig {
            lr: cfg.learning_rate,
            ..AdamConfig::default()
        },
    );
    std::fs::write(
        out_dir.join("train_config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;
    let mut log = std::io::BufWriter::new(std::fs::File::create(out_dir.join("train_log.jsonl"))?);

    let started = Instant::now();
    let mut step: u64 = 0;
    let mut last_loss = f64::NAN;
    let max_steps = if cfg.max_steps == 0 {
        u64::MAX
    } else {
        cfg.max_steps as u64
    };
    'epochs: for epoch in 0..cfg.epochs {
        let batches = epoch_batches(data.samples.len(), cfg.batch_size, cfg.seed, epoch);
        let mut subsample_rng =
            ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xD6E8FEB8 ^ (epoch as u64) << 17);
        for indices in batches {
            step += 1;
            let (input, labels) =
                assemble::<T>(&data, &indices, cfg.points_per_step, with_b3, &mut subsample_rng)?;
            let mut g: Graph<T> = Graph::new(true);
            let pass = model
                .forward(&mut g, &input, &ForwardOpts::default())
                .map_err(|e| Error::numeric(format!("step {step}: {e}")))?;
            let loss = build_loss(&mut g, &pass.nodes, &labels, &cfg.loss_weights, cfg.main_term)?;
            let loss_val = g.value(loss.total)[0].to_f64();
            if !loss_val.is_finite() {
                return Err(Error::numeric(format!(
                    "aborting: non-finite loss at step {step}"
                )));
            }
            g.backward(loss.total)
                .map_err(|e| Error::numeric(format!("step {step}: {e}")))?;
            model.params.clear_grads();
            let grads: Vec<(usize, Vec<T>)> = g
                .param_grads()
                .map(|(i, gr)| (i, gr.to_vec()))
                .collect();
            for (i, gr) in grads {
                model.params.accumulate_grad(i, &gr);
            }
            model.apply_updates(&pass)?;
            adam.step(&mut model.params)?;
            last_loss = loss_val;

            if step.is_multiple_of(cfg.log_every as u64) || step == 1 {
                let main = g.value(loss.main)[0].to_f64();
                let sides: Vec<f64> = loss.sides.iter().map(|&s| g.value(s)[0].to_f64()).collect();
                writeln!(
                    log,
                    "{}",
                    serde_json::json!({
                        "step": step,
                        "epoch": epoch,
                        "loss": loss_val,
                        "loss_main": main,
                        "loss_sides": sides,
                        "wall_ms": started.elapsed().as_millis() as u64,
                    })
                )?;
                log.flush()?;
            }
            if cfg.checkpoint_every > 0 && step.is_multiple_of(cfg.checkpoint_every as u64) {
                model.save(&out_dir.join(format!("ckpt_{step:06}.dmif")), Some(&adam))?;
            }
            if step >= max_steps {
                break 'epochs;
            }
        }
    }
    log.flush()?;
    let final_path = out_dir.join("checkpoint_final.dmif");
    model.save(&final_path, Some(&adam))?;
    Ok(TrainOutcome {
        final_checkpoint: final_path,
        steps: step,
        final_loss: last_loss,
    })
}

/// Deterministic evaluation-mode loss over the first `n` samples of a split.
pub fn validation_loss<T: Scalar>(
    model: &DmifNet<T>,
    dataset: &Dataset,
    split: &str,
    n: usize,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let with_b3 = model.n_branches() == 4;
    let data = load_split(dataset, split, &model.hyper, with_b3)?;
    let take = n.min(data.samples.len()).max(2);
    let indices: Vec<usize> = (0..take).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (input, labels) = assemble::<T>(&data, &indices, k, with_b3, &mut rng)?;
    let mut g: Graph<T> = Graph::inference();
    let pass = model.forward(&mut g, &input, &ForwardOpts::default())?;
    let loss = build_loss(
        &mut g,
        &pass.nodes,
        &labels,
        &LossWeights::default(),
        MainTerm::Mixed,
    )?;
    Ok(g.value(loss.total)[0].to_f64())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::BatchInput;
    use crate::numerics::gradcheck::{central_diff, max_rel_err};
    use crate::synthdata::{build_dataset, DataConfig};
    use rand::Rng;

    fn tiny_dataset(dir: &Path, per_kind: usize) -> Dataset {
        let mut counts = std::collections::BTreeMap::new();
        for kind in ["sphere", "box", "torus", "capsule", "union"] {
            counts.insert(kind.to_string(), per_kind);
        }
        build_dataset(
            &DataConfig {
                counts,
                image_size: 16,
                points_per_shape: 128,
                seed: 3,
            },
            dir,
        )
        .unwrap()
    }

    fn tiny_train_config(data: &Path) -> TrainConfig {
        TrainConfig {
            data: data.to_string_lossy().into_owned(),
            batch_size: 4,
            points_per_step: 32,
            epochs: 1,
            max_steps: 0,
            learning_rate: 0.004,
            seed: 11,
            loss_weights: LossWeights::default(),
            checkpoint_every: 0,
            log_every: 5,
            main_term: MainTerm::Mixed,
            model: ModelHyper::tiny(Variant::Full),
        }
    }

    fn toy_batch(
        model: &DmifNet<f64>,
        seed: u64,
        b: usize,
        k: usize,
    ) -> (BatchInput<f64>, Vec<f64>) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let size = model.hyper.image_size;
        let imgs: Vec<crate::dogfilter::Image> = (0..b)
            .map(|_| {
                crate::dogfilter::Image::from_data(
                    3,
                    size,
                    size,
                    (0..3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let img_refs: Vec<&crate::dogfilter::Image> = imgs.iter().collect();
        let points: Vec<Vec<[f64; 3]>> = (0..b)
            .map(|_| {
                (0..k)
                    .map(|_| {
                        [
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                        ]
                    })
                    .collect()
            })
            .collect();
        let input = BatchInput::from_images(&model.hyper, &img_refs, &points, true).unwrap();
        let labels: Vec<f64> = (0..b * k).map(|i| ((i * 7 + 3) % 2) as f64).collect();
        (input, labels)
    }

    #[test]
    fn perfect_prediction_gives_near_zero_loss() {
        let mut g: Graph<f64> = Graph::new(true);
        let labels: Vec<f64> = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
        let mk = |g: &mut Graph<f64>| g.input(vec![2, 3], labels.clone()).unwrap();
        let probs: Vec<NodeId> = (0..4).map(|_| mk(&mut g)).collect();
        let alpha = g.input(vec![2, 4], vec![0.25; 8]).unwrap();
        let mixed = g.mix_branches(&probs, alpha).unwrap();
        let z = g.input(vec![2, 1], vec![0.0; 2]).unwrap();
        let nodes = ForwardNodes {
            logits: probs.clone(),
            probs,
            alpha: Some(alpha),
            mixed,
            z,
        };
        let loss = build_loss(
            &mut g,
            &nodes,
            &labels,
            &LossWeights::default(),
            MainTerm::Mixed,
        )
        .unwrap();
        assert_eq!(nodes_term_count(&loss), 4);
        let bound = 4.0 * -(1.0 - PROB_EPS).ln();
        let v = g.value(loss.total)[0];
        assert!(v >= 0.0 && v <= bound + 1e-12, "loss {v} vs bound {bound}");
    }

    fn nodes_term_count(loss: &LossNodes) -> usize {
        1 + loss.sides.len()
    }

    #[test]
    fn all_half_probabilities_give_four_ln_two() {
        let mut g: Graph<f64> = Graph::new(true);
        let labels: Vec<f64> = vec![1.0, 0.0, 0.0, 1.0];
        let mk = |g: &mut Graph<f64>| g.input(vec![1, 4], vec![0.5; 4]).unwrap();
        let probs: Vec<NodeId> = (0..4).map(|_| mk(&mut g)).collect();
        let alpha = g.input(vec![1, 4], vec![0.25; 4]).unwrap();
        let mixed = g.mix_branches(&probs, alpha).unwrap();
        let z = g.input(vec![1, 1], vec![0.0]).unwrap();
        let nodes = ForwardNodes {
            logits: probs.clone(),
            probs,
            alpha: Some(alpha),
            mixed,
            z,
        };
        let loss = build_loss(
            &mut g,
            &nodes,
            &labels,
            &LossWeights::default(),
            MainTerm::Mixed,
        )
        .unwrap();
        let want = 4.0 * std::f64::consts::LN_2;
        assert!((g.value(loss.total)[0] - want).abs() < 1e-12);
    }

    #[test]
    fn label_outside_binary_rejected() {
        let mut g: Graph<f64> = Graph::new(true);
        let p = g.input(vec![2], vec![0.5, 0.5]).unwrap();
        assert!(g.bce_mean(p, &[0.5, 1.0], 1e-7).is_err());
    }

    /// Spread the parameters away from their symmetric init so branch
    /// probabilities separate; finite differences sit on kinks otherwise
    /// (near-tied min/max stats in the gate input).
    fn jitter_params(model: &mut DmifNet<f64>, seed: u64, scale: f64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for idx in 0..model.params.len() {
            let p = model.params.at_mut(idx);
            if !p.trainable {
                continue;
            }
            for v in p.value.data_mut().iter_mut() {
                *v += rng.gen_range(-scale..scale);
            }
        }
    }

    #[test]
    fn full_loss_matches_finite_differences() {
        // The whole architecture + joint loss against the central-difference
        // oracle, on a 2-sample batch at 64-bit.
        let mut model = DmifNet::<f64>::new(ModelHyper::tiny(Variant::Full), 61).unwrap();
        jitter_params(&mut model, 987, 0.15);
        let (input, labels) = toy_batch(&model, 62, 2, 6);

        let mut g: Graph<f64> = Graph::new(true);
        let pass = model.forward(&mut g, &input, &ForwardOpts::default()).unwrap();
        let loss = build_loss(
            &mut g,
            &pass.nodes,
            &labels,
            &LossWeights::default(),
            MainTerm::Mixed,
        )
        .unwrap();
        g.backward(loss.total).unwrap();
        let analytic: std::collections::HashMap<usize, Vec<f64>> = g
            .param_grads()
            .map(|(i, gr)| (i, gr.iter().map(|v| v.to_f64()).collect()))
            .collect();

        // Probe a spread of parameters (full FD over every scalar would be
        // slow); include shared, per-branch and gate weights.
        for probe in [
            "enc.stem.w",
            "enc.s2.c1.w",
            "enc.s4.c2.w",
            "dec0.blk0.fc1.w",
            "dec0.blk0.cbn1.sw",
            "dec1.out.fc.w",
            "dec3.fc_in.w",
            "b3enc.stem.w",
            "gate.fc1.w",
            "gate.fc2.b",
        ] {
            let idx = model.params.index(probe).unwrap();
            let x0 = model.params.at(idx).value.to_f64_vec();
            // FD over the first few coordinates of each probed tensor.
            let n_probe = x0.len().min(4);
            let f = |x: &[f64]| {
                let mut m = model.clone();
                let p = m.params.at_mut(idx);
                for (dst, &v) in p.value.data_mut().iter_mut().zip(x.iter()) {
                    *dst = v;
                }
                let mut g: Graph<f64> = Graph::new(true);
                let pass = m.forward(&mut g, &input, &ForwardOpts::default()).unwrap();
                let loss = build_loss(
                    &mut g,
                    &pass.nodes,
                    &labels,
                    &LossWeights::default(),
                    MainTerm::Mixed,
                )
                .unwrap();
                g.value(loss.total)[0]
            };
            let numeric = central_diff(f, &x0[..n_probe], 1e-3);
            let refined = central_diff(f, &x0[..n_probe], 1e-4);
            let got = &analytic[&idx][..n_probe];
            for j in 0..n_probe {
                let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(0.01);
                // Where the 1e-3 window straddles a relu/min/max corner the
                // difference quotient itself is unstable; such coordinates
                // must still match the refined step.
                let fd_stable = rel(numeric[j], refined[j]) <= 1e-4;
                let target = if fd_stable { numeric[j] } else { refined[j] };
                let err = rel(got[j], target);
                assert!(
                    err <= 1e-4,
                    "{probe}[{j}]: rel err {err} (fd {:.6e} refined {:.6e} analytic {:.6e})",
                    numeric[j],
                    refined[j],
                    got[j]
                );
            }
        }
        let _ = max_rel_err(&[0.0], &[0.0], 1.0);
    }

    #[test]
    fn shared_path_decomposition_and_tap_gradients() {
        let model = DmifNet::<f64>::new(ModelHyper::tiny(Variant::Full), 63).unwrap();
        let (input, labels) = toy_batch(&model, 64, 2, 5);
        let report = shared_path_report(
            &model,
            &input,
            &labels,
            &LossWeights::default(),
            MainTerm::Mixed,
        )
        .unwrap();
        // grad(total) = grad(main) + sum grad(sides), elementwise.
        assert!(
            report.max_decomposition_err() <= 1e-10,
            "decomposition err {}",
            report.max_decomposition_err()
        );
        // Shared-path parameters exist and collect from several terms.
        let shared: Vec<_> = report.shared_path().collect();
        assert!(!shared.is_empty());
        // Stage-2 weights receive gradient from the branch-I term alone.
        let s2 = report
            .entries
            .iter()
            .find(|e| e.name == "enc.s2.c1.w")
            .unwrap();
        assert_eq!(s2.tag, "shared-path");
        assert!(s2.side_norms[0] > 0.0, "branch I contributes nothing to stage 2");
        // Stage-4 weights are main-exclusive: no side-term gradient.
        let s4 = report
            .entries
            .iter()
            .find(|e| e.name == "enc.s4.c1.w")
            .unwrap();
        assert_eq!(s4.tag, "main-exclusive");
    }

    #[test]
    fn zero_side_weights_reduce_to_main_gradient() {
        let model = DmifNet::<f64>::new(ModelHyper::tiny(Variant::Full), 65).unwrap();
        let (input, labels) = toy_batch(&model, 66, 2, 5);
        let weights = LossWeights {
            main: 1.0,
            side: vec![0.0, 0.0, 0.0],
        };
        let report =
            shared_path_report(&model, &input, &labels, &weights, MainTerm::Mixed).unwrap();
        for e in report.entries {
            let side_total: f64 = e.side_norms.iter().sum();
            // With side weights zeroed the total equals the main term alone;
            // decomposition already checks the weighted sum, so just confirm
            // the norms agree.
            assert!(
                (e.total_norm - e.main_norm).abs() <= 1e-10 * (1.0 + side_total),
                "{}: total {} vs main {}",
                e.name,
                e.total_norm,
                e.main_norm
            );
        }
    }

    #[test]
    fn overfit_ten_shapes_halves_the_loss() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(tmp.path(), 2);
        let out = tempfile::tempdir().unwrap();
        let mut cfg = tiny_train_config(tmp.path());
        cfg.epochs = 300;
        cfg.max_steps = 200;
        cfg.batch_size = 8;
        cfg.points_per_step = 128;
        cfg.learning_rate = 0.01;
        cfg.model.precision = "f64".into();
        cfg.model.dec_width = 32;
        cfg.model.feat_dim = 32;
        cfg.model.enc_stages = [8, 16, 16, 32];
        let outcome = train(&ds, &cfg, out.path()).unwrap();
        // First logged loss vs final.
        let log = std::fs::read_to_string(out.path().join("train_log.jsonl")).unwrap();
        let first: serde_json::Value =
            serde_json::from_str(log.lines().next().unwrap()).unwrap();
        let first_loss = first["loss"].as_f64().unwrap();
        assert!(
            outcome.final_loss <= 0.5 * first_loss,
            "loss {} -> {} did not halve",
            first_loss,
            outcome.final_loss
        );
    }

    #[test]
    fn same_seed_same_checkpoint_bytes() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(tmp.path(), 2);
        let mut cfg = tiny_train_config(tmp.path());
        cfg.max_steps = 12;
        cfg.epochs = 10;
        let out1 = tempfile::tempdir().unwrap();
        let out2 = tempfile::tempdir().unwrap();
        train(&ds, &cfg, out1.path()).unwrap();
        train(&ds, &cfg, out2.path()).unwrap();
        let a = std::fs::read(out1.path().join("checkpoint_final.dmif")).unwrap();
        let b = std::fs::read(out2.path().join("checkpoint_final.dmif")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_reload_preserves_validation_loss() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(tmp.path(), 2);
        let mut cfg = tiny_train_config(tmp.path());
        cfg.max_steps = 8;
        cfg.model.precision = "f64".into();
        let out = tempfile::tempdir().unwrap();
        let outcome = train(&ds, &cfg, out.path()).unwrap();
        let loaded = crate::model::load_model(&outcome.final_checkpoint).unwrap();
        let model = match loaded {
            crate::model::LoadedModel::F64(m, adam) => {
                assert!(adam.is_some());
                m
            }
            _ => panic!("expected f64"),
        };
        let a = validation_loss(&model, &ds, "test", 4, 16, 5).unwrap();
        let b = validation_loss(&model, &ds, "test", 4, 16, 5).unwrap();
        assert_eq!(a, b);
        // Reload again: identical loss.
        let loaded2 = crate::model::load_model(&outcome.final_checkpoint).unwrap();
        if let crate::model::LoadedModel::F64(m2, _) = loaded2 {
            let c = validation_loss(&m2, &ds, "test", 4, 16, 5).unwrap();
            assert_eq!(a, c);
        }
    }

    #[test]
    fn ablation_variants_structure() {
        let tmp = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(tmp.path(), 2);
        let mut cfg = tiny_train_config(tmp.path());
        cfg.max_steps = 2;
        // B0-only checkpoint has no side-branch parameters.
        let out_b0 = tempfile::tempdir().unwrap();
        ablate(&ds, &cfg, Variant::MainOnly, out_b0.path()).unwrap();
        let (_, records) = crate::numerics::checkpoint::read_checkpoint(
            &out_b0.path().join("checkpoint_final.dmif"),
        )
        .unwrap();
        assert!(records.iter().all(|r| {
            !r.name.contains("dec1") && !r.name.contains("b3enc") && !r.name.contains("gate")
        }));
        // The full variant equals plain training with the same seed.
        let out_full = tempfile::tempdir().unwrap();
        let out_train = tempfile::tempdir().unwrap();
        ablate(&ds, &cfg, Variant::Full, out_full.path()).unwrap();
        train(&ds, &cfg, out_train.path()).unwrap();
        let a = std::fs::read(out_full.path().join("checkpoint_final.dmif")).unwrap();
        let b = std::fs::read(out_train.path().join("checkpoint_final.dmif")).unwrap();
        assert_eq!(a, b);
    }
}
