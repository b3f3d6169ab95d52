use dmif_core::metrics::evaluate::{evaluate_dataset, EvalConfig, ModelField};
use dmif_core::model::{load_model, LoadedModel, ModelHyper, Variant};
use dmif_core::trainer::{ablate, LossWeights, MainTerm, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(350);
    let seeds: Vec<u64> = args.get(2).map(|s| s.split(',').map(|x| x.parse().unwrap()).collect()).unwrap_or(vec![101, 202, 303]);
    let tmp = std::path::PathBuf::from("/tmp/pilot_default_data");
    let ds = dmif_core::synthdata::load_manifest(&tmp).unwrap();
    let variants = [Variant::MainOnly, Variant::MeanFusion, Variant::Pmm, Variant::Full];
    println!("steps={steps} seeds={seeds:?}");
    let mut means = Vec::new();
    for variant in variants {
        let mut accum = 0.0;
        for &seed in &seeds {
            let out = tempfile::tempdir().unwrap();
            let cfg = TrainConfig {
                data: tmp.to_string_lossy().into_owned(),
                batch_size: 8, points_per_step: 128, epochs: 10_000, max_steps: steps,
                learning_rate: 0.004, seed, loss_weights: LossWeights::default(),
                checkpoint_every: 0, log_every: 1000, main_term: MainTerm::Mixed,
                model: ModelHyper { variant, ..ModelHyper::default() },
            };
            let t = std::time::Instant::now();
            let outcome = ablate(&ds, &cfg, variant, out.path()).unwrap();
            let loaded = load_model(&outcome.final_checkpoint).unwrap();
            let ecfg = EvalConfig {
                split: "test".into(), iou_points: 2048, grid_resolution: 32, tau: 0.5,
                surface_samples: 4000, mesh_limit: Some(0), max_samples: Some(80), seed: 7, chunk: 4096,
            };
            let report = match &loaded {
                LoadedModel::F32(m, _) => evaluate_dataset(&ModelField(m), &ds, &ecfg).unwrap(),
                LoadedModel::F64(m, _) => evaluate_dataset(&ModelField(m), &ds, &ecfg).unwrap(),
            };
            println!("  {} seed {seed}: IoU {:.4} loss {:.4} ({:.0}s)",
                variant.name(), report.overall.iou, outcome.final_loss, t.elapsed().as_secs_f64());
            accum += report.overall.iou;
        }
        means.push(accum / seeds.len() as f64);
        println!("{} mean IoU {:.4}", variant.name(), means.last().unwrap());
    }
    println!("ordering: b0 {:.4} <= mean {:.4} <= pmm {:.4} <= full {:.4} (slack 0.005)",
        means[0], means[1], means[2], means[3]);
}
