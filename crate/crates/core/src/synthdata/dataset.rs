//! Dataset builder and loader: renders each shape, samples labeled points,
//! writes per-sample files plus a JSON-lines manifest.
//!
//! Per-sample files:
//! * `images/<id>.png` - 8-bit RGB render.
//! * `points/<id>.dmpt` - little-endian binary: magic `DMPT`, u32 point
//!   count K, K x 3 f32 coordinates, then K label bytes (1 = inside).

use super::render::{render, CameraSpec};
use super::{random_shape, sample_points, ShapeSpec};
use crate::error::{Error, Result};
use crate::numerics::init::fnv1a;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

pub const POINTS_MAGIC: &[u8; 4] = b"DMPT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Shapes per primitive kind (sphere | box | torus | capsule | union).
    pub counts: BTreeMap<String, usize>,
    pub image_size: usize,
    pub points_per_shape: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        let mut counts = BTreeMap::new();
        for kind in ["sphere", "box", "torus", "capsule", "union"] {
            counts.insert(kind.to_string(), 400);
        }
        DataConfig {
            counts,
            image_size: 64,
            points_per_shape: 2048,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub id: String,
    pub kind: String,
    pub split: String,
    pub image: String,
    pub points: String,
    pub shape: ShapeSpec,
    pub camera: CameraSpec,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub config: DataConfig,
}

impl Dataset {
    pub fn split(&self, split: &str) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == split).collect()
    }

    pub fn image_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.image)
    }

    pub fn points_path(&self, e: &ManifestEntry) -> PathBuf {
        self.root.join(&e.points)
    }
}

pub fn write_points(path: &Path, points: &[[f64; 3]], labels: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + points.len() * 13);
    buf.extend_from_slice(POINTS_MAGIC);
    buf.extend_from_slice(&(points.len() as u32).to_le_bytes());
    for p in points {
        for c in p {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
    }
    buf.extend_from_slice(labels);
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_points(path: &Path) -> Result<(Vec<[f32; 3]>, Vec<u8>)> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 8 || &buf[..4] != POINTS_MAGIC {
        return Err(Error::format(format!("{}: not a points file", path.display())));
    }
    let k = u32::from_le_bytes([buf[4], buf[5], buf[6], buf[7]]) as usize;
    if buf.len() != 8 + k * 12 + k {
        return Err(Error::format(format!("{}: truncated points file", path.display())));
    }
    let mut points = Vec::with_capacity(k);
    for i in 0..k {
        let at = 8 + i * 12;
        let x = f32::from_le_bytes([buf[at], buf[at + 1], buf[at + 2], buf[at + 3]]);
        let y = f32::from_le_bytes([buf[at + 4], buf[at + 5], buf[at + 6], buf[at + 7]]);
        let z = f32::from_le_bytes([buf[at + 8], buf[at + 9], buf[at + 10], buf[at + 11]]);
        points.push([x, y, z]);
    }
    let labels = buf[8 + k * 12..].to_vec();
    Ok((points, labels))
}

/// Deterministic 80/20 split: order shape ids by (hash, id) and put the first
/// four fifths in the train split.
fn assign_splits(ids: &[String]) -> BTreeMap<String, &'static str> {
    let mut order: Vec<(u64, &String)> = ids.iter().map(|id| (fnv1a(id.as_bytes()), id)).collect();
    order.sort();
    let n_train = ids.len() * 4 / 5;
    let mut out = BTreeMap::new();
    for (rank, (_, id)) in order.into_iter().enumerate() {
        out.insert(id.clone(), if rank < n_train { "train" } else { "test" });
    }
    out
}

/// Generate, render and label every shape; returns the loaded dataset.
/// Rebuilding with the same config produces byte-identical files.
pub fn build_dataset(cfg: &DataConfig, out_dir: &Path) -> Result<Dataset> {
    if cfg.points_per_shape == 0 || cfg.image_size < 16 {
        return Err(Error::config("points_per_shape must be > 0 and image_size >= 16"));
    }
    fs::create_dir_all(out_dir.join("images"))?;
    fs::create_dir_all(out_dir.join("points"))?;

    let mut planned: Vec<(String, String)> = Vec::new();
    for (kind, &count) in &cfg.counts {
        for i in 0..count {
            planned.push((kind.clone(), format!("{kind}_{i:05}")));
        }
    }
    let ids: Vec<String> = planned.iter().map(|(_, id)| id.clone()).collect();
    let splits = assign_splits(&ids);

    let entries: Vec<ManifestEntry> = planned
        .par_iter()
        .map(|(kind, id)| -> Result<ManifestEntry> {
            let spec = random_shape(kind, id, cfg.seed)?;
            let mut rng = crate::numerics::init::name_rng(cfg.seed.wrapping_add(1), id);
            let camera = CameraSpec {
                azimuth: rng.gen_range(0.0..std::f64::consts::TAU),
                elevation: rng.gen_range(-0.5..0.8),
            };
            let img = render(&spec, &camera, cfg.image_size, cfg.image_size);
            let image_rel = format!("images/{id}.png");
            let points_rel = format!("points/{id}.dmpt");
            img.save_png(&out_dir.join(&image_rel))?;
            let (points, labels) = sample_points(&spec, cfg.points_per_shape, cfg.seed);
            write_points(&out_dir.join(&points_rel), &points, &labels)?;
            Ok(ManifestEntry {
                id: id.clone(),
                kind: kind.clone(),
                split: splits[id].to_string(),
                image: image_rel,
                points: points_rel,
                shape: spec,
                camera,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut manifest = String::new();
    for e in &entries {
        manifest.push_str(&serde_json::to_string(e)?);
        manifest.push('\n');
    }
    fs::write(out_dir.join("manifest.jsonl"), manifest)?;
    fs::write(
        out_dir.join("data_config.json"),
        serde_json::to_string_pretty(cfg)?,
    )?;

    Ok(Dataset {
        root: out_dir.to_path_buf(),
        entries,
        config: cfg.clone(),
    })
}

/// Load a dataset directory, checking that every referenced file exists.
pub fn load_manifest(dir: &Path) -> Result<Dataset> {
    let manifest = fs::read_to_string(dir.join("manifest.jsonl"))
        .map_err(|e| Error::dataset(format!("{}: {e}", dir.join("manifest.jsonl").display())))?;
    let mut entries = Vec::new();
    for (lineno, line) in manifest.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(line)
            .map_err(|err| Error::dataset(format!("manifest line {}: {err}", lineno + 1)))?;
        for rel in [&e.image, &e.points] {
            if !dir.join(rel).is_file() {
                return Err(Error::dataset(format!("missing file {rel} for sample {}", e.id)));
            }
        }
        entries.push(e);
    }
    if entries.is_empty() {
        return Err(Error::dataset("manifest is empty"));
    }
    let config: DataConfig = match fs::read_to_string(dir.join("data_config.json")) {
        Ok(s) => serde_json::from_str(&s)?,
        Err(_) => DataConfig::default(),
    };
    Ok(Dataset {
        root: dir.to_path_buf(),
        entries,
        config,
    })
}
