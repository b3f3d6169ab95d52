use dmif_core::metrics::evaluate::{evaluate_dataset, EvalConfig, ModelField};
use dmif_core::model::{load_model, LoadedModel, ModelHyper, Variant};
use dmif_core::synthdata::{build_dataset, DataConfig};
use dmif_core::trainer::{train, LossWeights, MainTerm, TrainConfig};
use std::collections::BTreeMap;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3000);
    let kpts: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(128);
    let tmp = std::path::PathBuf::from("/tmp/pilot_default_data");
    if !tmp.join("manifest.jsonl").exists() {
        let t = std::time::Instant::now();
        build_dataset(&DataConfig::default(), &tmp).unwrap();
        println!("dataset built in {:.1}s", t.elapsed().as_secs_f64());
    }
    let ds = dmif_core::synthdata::load_manifest(&tmp).unwrap();
    println!("train {} test {}", ds.split("train").len(), ds.split("test").len());

    let out = std::path::PathBuf::from("/tmp/pilot_run6");
    let _ = std::fs::remove_dir_all(&out);
    let cfg = TrainConfig {
        data: tmp.to_string_lossy().into_owned(),
        batch_size: 8,
        points_per_step: kpts,
        epochs: 10_000,
        max_steps: steps,
        learning_rate: 0.004,
        seed: 1,
        loss_weights: LossWeights::default(),
        checkpoint_every: 500,
        log_every: 50,
        main_term: MainTerm::Mixed,
        model: ModelHyper { variant: Variant::Full, ..ModelHyper::default() },
    };
    let t = std::time::Instant::now();
    let outcome = train(&ds, &cfg, &out).unwrap();
    let train_s = t.elapsed().as_secs_f64();
    println!(
        "{} steps in {:.1}s ({:.2} s/step), final loss {:.4}",
        outcome.steps, train_s, train_s / outcome.steps as f64, outcome.final_loss
    );

    // Evaluate IoU on a 60-shape held-out subset + NC on 12 meshes for each saved checkpoint.
    let mut ckpts: Vec<std::path::PathBuf> = std::fs::read_dir(&out)
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            let n = p.file_name().unwrap().to_string_lossy().to_string();
            if n.starts_with("ckpt_") || n == "checkpoint_final.dmif" { Some(p) } else { None }
        })
        .collect();
    ckpts.sort();
    for ckpt in ckpts {
        let loaded = load_model(&ckpt).unwrap();
        let cfg = EvalConfig {
            split: "test".into(),
            iou_points: 2048,
            grid_resolution: 32,
            tau: 0.5,
            surface_samples: 4000,
            mesh_limit: Some(12),
            max_samples: Some(60),
            seed: 7,
            chunk: 4096,
        };
        let t = std::time::Instant::now();
        let report = match &loaded {
            LoadedModel::F32(m, _) => evaluate_dataset(&ModelField(m), &ds, &cfg).unwrap(),
            LoadedModel::F64(m, _) => evaluate_dataset(&ModelField(m), &ds, &cfg).unwrap(),
        };
        println!(
            "{}: IoU {:.4} NC {:.4} chamfer {:.4} ({:.0}s eval)",
            ckpt.file_name().unwrap().to_string_lossy(),
            report.overall.iou, report.overall.nc, report.overall.chamfer,
            t.elapsed().as_secs_f64()
        );
    }
}
