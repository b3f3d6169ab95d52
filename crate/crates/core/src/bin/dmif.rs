//! Command-line entry point: dataset building, training, ablation,
//! reconstruction, evaluation and DoG preview.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dmif_core::dogfilter::{dog_map, dog_preview, to_grayscale, GaussianScaleSpec, Image};
use dmif_core::meshing::{evaluate_grid, marching_cubes};
use dmif_core::metrics::evaluate::{evaluate_dataset, EvalConfig, ModelField};
use dmif_core::model::{load_model, LoadedModel, Variant};
use dmif_core::numerics::Scalar;
use dmif_core::synthdata::{build_dataset, load_manifest, DataConfig};
use dmif_core::trainer::{ablate, train, TrainConfig};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "dmif",
    version,
    about = "Four-branch occupancy network for single-view 3D reconstruction on procedural solids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (1 = fully serial); falls back to DMIF_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Append JSON-lines progress events to this file instead of stderr.
    #[arg(long, global = true)]
    log_file: Option<PathBuf>,
}

#[derive(Args)]
struct CommonOut {
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural dataset (renders, labeled points, manifest).
    BuildData {
        /// JSON config (counts per kind, image size, points per shape, seed).
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
        /// Override config keys, e.g. --set seed=9 --set image_size=32.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[command(flatten)]
        common: CommonOut,
    },
    /// Train the model described by a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory (checkpoints, logs, effective config).
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[command(flatten)]
        common: CommonOut,
    },
    /// Train a reduced model variant (or all of them) for the ablation study.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// b0 | b0+b1+b2 | b0+b1+b2+pmm | full | all
        #[arg(long)]
        variant: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[command(flatten)]
        common: CommonOut,
    },
    /// Reconstruct a mesh from one image with a trained checkpoint.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output OBJ path.
        #[arg(long)]
        out: PathBuf,
        /// Occupancy grid resolution per axis.
        #[arg(long, default_value_t = 64)]
        resolution: usize,
        /// Extraction threshold.
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[command(flatten)]
        common: CommonOut,
    },
    /// Evaluate a checkpoint on a dataset split (IoU, NC, Chamfer).
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Report JSON path.
        #[arg(long)]
        out: PathBuf,
        /// Also write a per-kind CSV table.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 10_000)]
        iou_points: usize,
        #[arg(long, default_value_t = 32)]
        resolution: usize,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long, default_value_t = 10_000)]
        surface_samples: usize,
        /// Mesh metrics on at most this many samples.
        #[arg(long)]
        mesh_limit: Option<usize>,
        /// Evaluate at most this many samples.
        #[arg(long)]
        max_samples: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        common: CommonOut,
    },
    /// Write the difference-of-Gaussians map of an image as a grayscale PNG.
    DogPreview {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        sigma_low: f64,
        #[arg(long, default_value_t = 1.6)]
        sigma_high: f64,
        #[command(flatten)]
        common: CommonOut,
    },
}

struct Logger {
    file: Option<std::fs::File>,
}

impl Logger {
    fn event(&mut self, value: serde_json::Value) {
        let line = value.to_string();
        match &mut self.file {
            Some(f) => {
                let _ = writeln!(f, "{line}");
            }
            None => eprintln!("{line}"),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("DMIF_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", serde_json::json!({"error": format!("thread pool: {e}")}));
            std::process::exit(1);
        }
    }
    let mut logger = Logger {
        file: cli.log_file.as_ref().and_then(|p| {
            std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .ok()
        }),
    };
    if let Err(err) = run(cli.command, &mut logger) {
        let chain: Vec<String> = err.chain().map(|c| c.to_string()).collect();
        eprintln!("{}", serde_json::json!({"error": chain.join(": ")}));
        std::process::exit(1);
    }
}

fn refuse_clobber(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!(
            "{} already exists; pass --force to overwrite",
            path.display()
        );
    }
    Ok(())
}

/// Load a JSON config and apply `--set key=value` overrides (dot paths).
fn load_config<T: serde::de::DeserializeOwned>(path: &Path, overrides: &[String]) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    for kv in overrides {
        let (key, raw) = kv
            .split_once('=')
            .with_context(|| format!("override `{kv}` is not KEY=VALUE"))?;
        let parsed: serde_json::Value = serde_json::from_str(raw)
            .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
        let mut slot = &mut value;
        let parts: Vec<&str> = key.split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let obj = slot
                .as_object_mut()
                .with_context(|| format!("override path `{key}` does not address an object"))?;
            if i + 1 == parts.len() {
                obj.insert(part.to_string(), parsed.clone());
                break;
            }
            slot = obj
                .entry(part.to_string())
                .or_insert_with(|| serde_json::json!({}));
        }
    }
    Ok(serde_json::from_value(value)?)
}

fn run(cmd: Command, log: &mut Logger) -> Result<()> {
    match cmd {
        Command::BuildData {
            config,
            out,
            overrides,
            common,
        } => {
            refuse_clobber(&out.join("manifest.jsonl"), common.force)?;
            let cfg: DataConfig = load_config(&config, &overrides)?;
            let started = std::time::Instant::now();
            let ds = build_dataset(&cfg, &out)?;
            log.event(serde_json::json!({
                "event": "build-data",
                "out": out.display().to_string(),
                "shapes": ds.entries.len(),
                "train": ds.split("train").len(),
                "test": ds.split("test").len(),
                "wall_ms": started.elapsed().as_millis() as u64,
            }));
            println!("built {} shapes under {}", ds.entries.len(), out.display());
        }
        Command::Train {
            config,
            out,
            overrides,
            common,
        } => {
            refuse_clobber(&out.join("checkpoint_final.dmif"), common.force)?;
            let cfg: TrainConfig = load_config(&config, &overrides)?;
            let ds = load_manifest(Path::new(&cfg.data))?;
            let started = std::time::Instant::now();
            let outcome = train(&ds, &cfg, &out)?;
            log.event(serde_json::json!({
                "event": "train",
                "steps": outcome.steps,
                "final_loss": outcome.final_loss,
                "checkpoint": outcome.final_checkpoint.display().to_string(),
                "wall_ms": started.elapsed().as_millis() as u64,
            }));
            println!(
                "trained {} steps, final loss {:.4}, checkpoint {}",
                outcome.steps,
                outcome.final_loss,
                outcome.final_checkpoint.display()
            );
        }
        Command::Ablate {
            config,
            out,
            variant,
            overrides,
            common,
        } => {
            let cfg: TrainConfig = load_config(&config, &overrides)?;
            let ds = load_manifest(Path::new(&cfg.data))?;
            let variants: Vec<Variant> = if variant == "all" {
                Variant::all().to_vec()
            } else {
                vec![Variant::from_str(&variant)?]
            };
            for v in variants {
                let vdir = out.join(v.name());
                refuse_clobber(&vdir.join("checkpoint_final.dmif"), common.force)?;
                let started = std::time::Instant::now();
                let outcome = ablate(&ds, &cfg, v, &vdir)?;
                log.event(serde_json::json!({
                    "event": "ablate",
                    "variant": v.name(),
                    "steps": outcome.steps,
                    "final_loss": outcome.final_loss,
                    "wall_ms": started.elapsed().as_millis() as u64,
                }));
                println!(
                    "variant {}: {} steps, final loss {:.4}",
                    v.name(),
                    outcome.steps,
                    outcome.final_loss
                );
            }
        }
        Command::Reconstruct {
            checkpoint,
            image,
            out,
            resolution,
            tau,
            common,
        } => {
            refuse_clobber(&out, common.force)?;
            let img = Image::load_png(&image)?;
            let loaded = load_model(&checkpoint)?;
            let mesh = match &loaded {
                LoadedModel::F32(m, _) => reconstruct_mesh(m, &img, resolution, tau)?,
                LoadedModel::F64(m, _) => reconstruct_mesh(m, &img, resolution, tau)?,
            };
            mesh.write_obj(&out)?;
            let meta = serde_json::json!({
                "checkpoint": checkpoint.display().to_string(),
                "image": image.display().to_string(),
                "resolution": resolution,
                "tau": tau,
                "vertices": mesh.vertices.len(),
                "triangles": mesh.triangles.len(),
            });
            std::fs::write(
                out.with_extension("meta.json"),
                serde_json::to_string_pretty(&meta)?,
            )?;
            log.event(serde_json::json!({"event": "reconstruct", "out": out.display().to_string(),
                "vertices": mesh.vertices.len(), "triangles": mesh.triangles.len()}));
            println!(
                "wrote {} ({} vertices, {} triangles)",
                out.display(),
                mesh.vertices.len(),
                mesh.triangles.len()
            );
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            out,
            csv,
            iou_points,
            resolution,
            tau,
            surface_samples,
            mesh_limit,
            max_samples,
            seed,
            common,
        } => {
            refuse_clobber(&out, common.force)?;
            let ds = load_manifest(&data)?;
            let cfg = EvalConfig {
                split,
                iou_points,
                grid_resolution: resolution,
                tau,
                surface_samples,
                mesh_limit,
                max_samples,
                seed,
                chunk: 4096,
            };
            let loaded = load_model(&checkpoint)?;
            let started = std::time::Instant::now();
            let report = match &loaded {
                LoadedModel::F32(m, _) => evaluate_dataset(&ModelField(m), &ds, &cfg)?,
                LoadedModel::F64(m, _) => evaluate_dataset(&ModelField(m), &ds, &cfg)?,
            };
            std::fs::write(&out, serde_json::to_string_pretty(&report)?)?;
            if let Some(csv_path) = csv {
                std::fs::write(&csv_path, report.to_csv())?;
            }
            log.event(serde_json::json!({
                "event": "eval",
                "samples": report.overall.count,
                "iou": report.overall.iou,
                "nc": report.overall.nc,
                "chamfer": report.overall.chamfer,
                "wall_ms": started.elapsed().as_millis() as u64,
            }));
            println!(
                "evaluated {} samples: IoU {:.4}, NC {:.4}, Chamfer {:.4} -> {}",
                report.overall.count,
                report.overall.iou,
                report.overall.nc,
                report.overall.chamfer,
                out.display()
            );
        }
        Command::DogPreview {
            image,
            out,
            sigma_low,
            sigma_high,
            common,
        } => {
            refuse_clobber(&out, common.force)?;
            let img = Image::load_png(&image)?;
            let gray = to_grayscale(&img)?;
            let spec = GaussianScaleSpec {
                sigmas: vec![sigma_low, sigma_high],
                truncation: 3.0,
            };
            let map = dog_map(&gray, &spec, 0)?;
            dog_preview(&map).save_png(&out)?;
            log.event(serde_json::json!({"event": "dog-preview", "out": out.display().to_string()}));
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn reconstruct_mesh<T: Scalar>(
    model: &dmif_core::model::DmifNet<T>,
    img: &Image,
    resolution: usize,
    tau: f64,
) -> Result<dmif_core::meshing::TriangleMesh> {
    let grid = evaluate_grid(model, img, resolution, 4096)?;
    Ok(marching_cubes(&grid, tau)?)
}
