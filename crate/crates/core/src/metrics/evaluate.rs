//! End-to-end evaluation: reconstruct every held-out sample, sample mesh
//! surfaces, and aggregate IoU / normal consistency / Chamfer per primitive
//! kind and overall.

use super::{chamfer_l1, iou, iou_points, normal_consistency};
use crate::dogfilter::Image;
use crate::error::{Error, Result};
use crate::meshing::{evaluate_grid, marching_cubes, OccupancyGrid, TriangleMesh};
use crate::model::DmifNet;
use crate::numerics::init::fnv1a;
use crate::numerics::Scalar;
use crate::synthdata::{Dataset, ManifestEntry, ShapeSpec};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Anything that can answer fused occupancy queries for an image: the
/// trained model, or the analytic oracle used to sanity-bound the pipeline.
pub trait OccupancyField {
    fn probs(&self, img: &Image, points: &[[f64; 3]]) -> Result<Vec<f64>>;
    fn grid(&self, img: &Image, resolution: usize, chunk: usize) -> Result<OccupancyGrid>;
}

pub struct ModelField<'a, T>(pub &'a DmifNet<T>);

impl<T: Scalar> OccupancyField for ModelField<'_, T> {
    fn probs(&self, img: &Image, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        let out = self.0.predict(&[img], &[points.to_vec()], &Default::default())?;
        Ok(out.mixed)
    }

    fn grid(&self, img: &Image, resolution: usize, chunk: usize) -> Result<OccupancyGrid> {
        evaluate_grid(self.0, img, resolution, chunk)
    }
}

/// Ground-truth occupancy straight from the signed distance function.
pub struct AnalyticField<'a>(pub &'a ShapeSpec);

impl OccupancyField for AnalyticField<'_> {
    fn probs(&self, _img: &Image, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        Ok(points
            .iter()
            .map(|&p| if self.0.sdf(p) < 0.0 { 1.0 } else { 0.0 })
            .collect())
    }

    fn grid(&self, _img: &Image, resolution: usize, _chunk: usize) -> Result<OccupancyGrid> {
        analytic_grid(self.0, resolution)
    }
}

/// Distance-proportional occupancy ramp: crosses 0.5 exactly on the surface
/// and is linear within one voxel, so edge interpolation recovers the true
/// surface position and orientation instead of voxel midpoints.
pub fn analytic_grid(shape: &ShapeSpec, resolution: usize) -> Result<OccupancyGrid> {
    let h = 1.0 / resolution as f64;
    OccupancyGrid::from_field(resolution, |p| {
        (0.5 - shape.sdf(p) / (2.0 * h)).clamp(0.0, 1.0)
    })
}

fn d_split() -> String {
    "test".into()
}
fn d_iou_points() -> usize {
    10_000
}
fn d_resolution() -> usize {
    32
}
fn d_tau() -> f64 {
    0.5
}
fn d_surface_samples() -> usize {
    10_000
}
fn d_seed() -> u64 {
    7
}
fn d_chunk() -> usize {
    4096
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "d_split")]
    pub split: String,
    /// Uniform points for the IoU estimate, per sample.
    #[serde(default = "d_iou_points")]
    pub iou_points: usize,
    #[serde(default = "d_resolution")]
    pub grid_resolution: usize,
    #[serde(default = "d_tau")]
    pub tau: f64,
    /// Surface samples per mesh for Chamfer / normal consistency.
    #[serde(default = "d_surface_samples")]
    pub surface_samples: usize,
    /// Evaluate mesh metrics on at most this many samples (seeded subset);
    /// IoU always covers every selected sample.
    #[serde(default)]
    pub mesh_limit: Option<usize>,
    /// Cap on the number of evaluated samples (seeded subset).
    #[serde(default)]
    pub max_samples: Option<usize>,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_chunk")]
    pub chunk: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub kind: String,
    pub iou: f64,
    pub nc: Option<f64>,
    pub chamfer: Option<f64>,
    /// Extraction produced no surface; excluded from NC/Chamfer.
    pub mesh_empty: bool,
    /// Mesh metrics not requested for this sample (mesh_limit subset).
    pub mesh_skipped: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub count: usize,
    pub mesh_count: usize,
    pub iou: f64,
    pub nc: f64,
    pub chamfer: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: EvalConfig,
    pub overall: Aggregate,
    pub per_kind: BTreeMap<String, Aggregate>,
    pub rows: Vec<SampleRow>,
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,count,mesh_count,iou,nc,chamfer\n");
        for (kind, a) in &self.per_kind {
            out.push_str(&format!(
                "{kind},{},{},{:.6},{:.6},{:.6}\n",
                a.count, a.mesh_count, a.iou, a.nc, a.chamfer
            ));
        }
        out.push_str(&format!(
            "mean,{},{},{:.6},{:.6},{:.6}\n",
            self.overall.count, self.overall.mesh_count, self.overall.iou, self.overall.nc,
            self.overall.chamfer
        ));
        out
    }
}

/// Deterministic seeded subset: order by hashed id, take the first n.
fn select<'a>(entries: &[&'a ManifestEntry], n: Option<usize>, seed: u64) -> Vec<&'a ManifestEntry> {
    match n {
        None => entries.to_vec(),
        Some(n) if n >= entries.len() => entries.to_vec(),
        Some(n) => {
            let mut order: Vec<(u64, &&ManifestEntry)> = entries
                .iter()
                .map(|e| (fnv1a(e.id.as_bytes()) ^ seed.wrapping_mul(0x9e3779b97f4a7c15), e))
                .collect();
            order.sort_by_key(|(h, e)| (*h, e.id.clone()));
            order.into_iter().take(n).map(|(_, e)| *e).collect()
        }
    }
}

/// Metrics for one sample against its analytic ground truth.
pub fn evaluate_sample<F: OccupancyField>(
    field: &F,
    img: &Image,
    entry: &ManifestEntry,
    cfg: &EvalConfig,
    with_mesh: bool,
) -> Result<SampleRow> {
    let sample_seed = cfg.seed ^ fnv1a(entry.id.as_bytes());
    let pts = iou_points(cfg.iou_points, sample_seed);
    let probs = field.probs(img, &pts)?;
    let pred_in: Vec<bool> = probs.iter().map(|&p| p > cfg.tau).collect();
    let gt_in: Vec<bool> = pts.iter().map(|&p| entry.shape.sdf(p) < 0.0).collect();
    let iou_val = iou(&pred_in, &gt_in)?;

    if !with_mesh {
        return Ok(SampleRow {
            id: entry.id.clone(),
            kind: entry.kind.clone(),
            iou: iou_val,
            nc: None,
            chamfer: None,
            mesh_empty: false,
            mesh_skipped: true,
        });
    }

    let pred_grid = field.grid(img, cfg.grid_resolution, cfg.chunk)?;
    let pred_mesh = marching_cubes(&pred_grid, cfg.tau)?;
    if pred_mesh.is_empty() {
        return Ok(SampleRow {
            id: entry.id.clone(),
            kind: entry.kind.clone(),
            iou: iou_val,
            nc: None,
            chamfer: None,
            mesh_empty: true,
            mesh_skipped: false,
        });
    }
    let gt_mesh = ground_truth_mesh(&entry.shape, cfg.grid_resolution)?;
    let (pp, pn) = pred_mesh.sample_surface(cfg.surface_samples, sample_seed ^ 0xA5A5)?;
    let (gp, gn) = gt_mesh.sample_surface(cfg.surface_samples, sample_seed ^ 0x5A5A)?;
    let chamfer = chamfer_l1(&pp, &gp)?;
    let nc = normal_consistency(&pp, &pn, &gp, &gn)?;
    Ok(SampleRow {
        id: entry.id.clone(),
        kind: entry.kind.clone(),
        iou: iou_val,
        nc: Some(nc),
        chamfer: Some(chamfer),
        mesh_empty: false,
        mesh_skipped: false,
    })
}

pub fn ground_truth_mesh(shape: &ShapeSpec, resolution: usize) -> Result<TriangleMesh> {
    marching_cubes(&analytic_grid(shape, resolution)?, 0.5)
}

/// Evaluate a split of the dataset and aggregate per kind and overall.
pub fn evaluate_dataset<F: OccupancyField>(
    field: &F,
    dataset: &Dataset,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    let entries = dataset.split(&cfg.split);
    if entries.is_empty() {
        return Err(Error::dataset(format!("split {} is empty", cfg.split)));
    }
    let selected = select(&entries, cfg.max_samples, cfg.seed);
    let mesh_set: std::collections::HashSet<String> =
        select(&selected, cfg.mesh_limit, cfg.seed.wrapping_add(1))
            .into_iter()
            .map(|e| e.id.clone())
            .collect();

    let mut rows = Vec::with_capacity(selected.len());
    for entry in &selected {
        let img = Image::load_png(&dataset.image_path(entry))?;
        let with_mesh = mesh_set.contains(&entry.id);
        rows.push(evaluate_sample(field, &img, entry, cfg, with_mesh)?);
    }

    let mut per_kind: BTreeMap<String, Vec<&SampleRow>> = BTreeMap::new();
    for row in &rows {
        per_kind.entry(row.kind.clone()).or_default().push(row);
    }
    let agg = |rows: &[&SampleRow]| -> Aggregate {
        let count = rows.len();
        let iou = rows.iter().map(|r| r.iou).sum::<f64>() / count.max(1) as f64;
        let withm: Vec<&&SampleRow> = rows.iter().filter(|r| r.nc.is_some()).collect();
        let mesh_count = withm.len();
        let nc = withm.iter().map(|r| r.nc.unwrap()).sum::<f64>() / mesh_count.max(1) as f64;
        let chamfer =
            withm.iter().map(|r| r.chamfer.unwrap()).sum::<f64>() / mesh_count.max(1) as f64;
        Aggregate {
            count,
            mesh_count,
            iou,
            nc,
            chamfer,
        }
    };
    let all_rows: Vec<&SampleRow> = rows.iter().collect();
    let overall = agg(&all_rows);
    let per_kind = per_kind
        .into_iter()
        .map(|(k, v)| (k, agg(&v)))
        .collect::<BTreeMap<_, _>>();

    Ok(MetricsReport {
        config: cfg.clone(),
        overall,
        per_kind,
        rows,
    })
}
