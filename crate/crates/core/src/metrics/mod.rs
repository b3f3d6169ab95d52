//! Reconstruction quality metrics: volumetric IoU from point indicators,
//! symmetric Chamfer distance over surface samples, and normal consistency
//! at nearest-neighbor correspondences.

pub mod evaluate;
pub mod kdtree;

pub use evaluate::{evaluate_dataset, EvalConfig, MetricsReport, SampleRow};
pub use kdtree::NearestNeighborIndex;

use crate::error::{Error, Result};

/// Intersection-over-union of two indicator vectors sampled at the same
/// evaluation points. Both-empty is defined as 1.
pub fn iou(pred_inside: &[bool], gt_inside: &[bool]) -> Result<f64> {
    if pred_inside.is_empty() || pred_inside.len() != gt_inside.len() {
        return Err(Error::shape(
            "iou needs equal, non-empty indicator sets evaluated at shared points",
        ));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&p, &g) in pred_inside.iter().zip(gt_inside.iter()) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Symmetric Chamfer distance: mean Euclidean distance from each set to the
/// other's nearest neighbor, the two directional means added.
pub fn chamfer_l1(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::shape("chamfer needs two non-empty point sets"));
    }
    let pred_index = NearestNeighborIndex::new(pred.to_vec(), None)?;
    let gt_index = NearestNeighborIndex::new(gt.to_vec(), None)?;
    let to = |points: &[[f64; 3]], index: &NearestNeighborIndex| -> f64 {
        let mut acc = 0.0;
        for &p in points {
            acc += index.nearest(p).1.sqrt();
        }
        acc / points.len() as f64
    };
    Ok(to(pred, &gt_index) + to(gt, &pred_index))
}

fn check_unit(normals: &[[f64; 3]]) -> Result<()> {
    for n in normals {
        let l2 = n[0] * n[0] + n[1] * n[1] + n[2] * n[2];
        if (l2.sqrt() - 1.0).abs() > 1e-4 {
            return Err(Error::numeric(format!(
                "non-unit normal ({}, {}, {})",
                n[0], n[1], n[2]
            )));
        }
    }
    Ok(())
}

/// Mean absolute cosine between normals at nearest-neighbor
/// correspondences, averaged over both directions so the result is in
/// [0, 1].
pub fn normal_consistency(
    pred_points: &[[f64; 3]],
    pred_normals: &[[f64; 3]],
    gt_points: &[[f64; 3]],
    gt_normals: &[[f64; 3]],
) -> Result<f64> {
    if pred_points.is_empty() || gt_points.is_empty() {
        return Err(Error::shape("normal consistency needs non-empty samples"));
    }
    if pred_points.len() != pred_normals.len() || gt_points.len() != gt_normals.len() {
        return Err(Error::shape("one normal per point required"));
    }
    check_unit(pred_normals)?;
    check_unit(gt_normals)?;
    let pred_index = NearestNeighborIndex::new(pred_points.to_vec(), Some(pred_normals.to_vec()))?;
    let gt_index = NearestNeighborIndex::new(gt_points.to_vec(), Some(gt_normals.to_vec()))?;
    let dir = |points: &[[f64; 3]], normals: &[[f64; 3]], other: &NearestNeighborIndex| -> f64 {
        let mut acc = 0.0;
        for (p, n) in points.iter().zip(normals.iter()) {
            let (j, _) = other.nearest(*p);
            let g = other.normal(j).expect("index built with normals");
            acc += (n[0] * g[0] + n[1] * g[1] + n[2] * g[2]).abs();
        }
        acc / points.len() as f64
    };
    Ok(0.5 * (dir(pred_points, pred_normals, &gt_index) + dir(gt_points, gt_normals, &pred_index)))
}

/// Uniform evaluation points in [-0.5, 0.5]^3 for the IoU estimator.
pub fn iou_points(m: usize, seed: u64) -> Vec<[f64; 3]> {
    use rand::Rng;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            [
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
                rng.gen_range(-0.5..0.5),
            ]
        })
        .collect()
}
