//! Training data cache and deterministic batch assembly.

use crate::dogfilter::{branch3_input, Image};
use crate::error::{Error, Result};
use crate::model::{BatchInput, ModelHyper};
use crate::numerics::{Scalar, Tensor};
use crate::synthdata::dataset::read_points;
use crate::synthdata::Dataset;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// One decoded sample with preprocessing already applied.
pub struct CachedSample {
    pub id: String,
    /// [H, W, 3] f32.
    pub rgb: Vec<f32>,
    /// [H, W, 4] f32 (RGB + rescaled difference map).
    pub b3: Option<Vec<f32>>,
    pub points: Vec<[f32; 3]>,
    pub labels: Vec<u8>,
}

pub struct TrainData {
    pub samples: Vec<CachedSample>,
    pub image_size: usize,
    pub k_stored: usize,
}

/// Decode a split into memory (images, DoG maps, point files).
pub fn load_split(
    dataset: &Dataset,
    split: &str,
    hyper: &ModelHyper,
    with_b3: bool,
) -> Result<TrainData> {
    let entries = dataset.split(split);
    if entries.is_empty() {
        return Err(Error::dataset(format!("split {split} is empty")));
    }
    let samples: Vec<CachedSample> = entries
        .par_iter()
        .map(|e| -> Result<CachedSample> {
            let img = Image::load_png(&dataset.image_path(e))?;
            if img.height != hyper.image_size || img.width != hyper.image_size {
                return Err(Error::dataset(format!(
                    "sample {} is {}x{}, model expects {}",
                    e.id, img.height, img.width, hyper.image_size
                )));
            }
            let (h, w) = (img.height, img.width);
            let mut rgb = vec![0f32; h * w * 3];
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        rgb[(y * w + x) * 3 + c] = img.at(c, y, x) as f32;
                    }
                }
            }
            let b3 = if with_b3 {
                let four = branch3_input(&img, &hyper.scale_spec())?;
                let mut out = vec![0f32; h * w * 4];
                for c in 0..4 {
                    for y in 0..h {
                        for x in 0..w {
                            out[(y * w + x) * 4 + c] = four.at(c, y, x) as f32;
                        }
                    }
                }
                Some(out)
            } else {
                None
            };
            let (points, labels) = read_points(&dataset.points_path(e))?;
            Ok(CachedSample {
                id: e.id.clone(),
                rgb,
                b3,
                points,
                labels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let k_stored = samples[0].points.len();
    if samples.iter().any(|s| s.points.len() != k_stored) {
        return Err(Error::dataset("samples disagree on stored point count"));
    }
    Ok(TrainData {
        samples,
        image_size: hyper.image_size,
        k_stored,
    })
}

/// Shuffled sample indices for an epoch, grouped into batches; trailing
/// batches smaller than 2 are dropped (batch statistics need them).
pub fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x2545F4914F6CDD1D));
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(|c| c.to_vec())
        .collect()
}

/// Gather a batch: per-sample point subsets drawn from a seeded stream, the
/// image planes cast to the training precision.
pub fn assemble<T: Scalar>(
    data: &TrainData,
    indices: &[usize],
    k_step: usize,
    with_b3: bool,
    rng: &mut ChaCha8Rng,
) -> Result<(BatchInput<T>, Vec<T>)> {
    let b = indices.len();
    let hw = data.image_size;
    if k_step > data.k_stored {
        return Err(Error::config(format!(
            "points_per_step {k_step} exceeds stored {} points",
            data.k_stored
        )));
    }
    let mut rgb = Vec::with_capacity(b * hw * hw * 3);
    let mut b3 = if with_b3 {
        Some(Vec::with_capacity(b * hw * hw * 4))
    } else {
        None
    };
    let mut pts = Vec::with_capacity(b * k_step * 3);
    let mut labels = Vec::with_capacity(b * k_step);
    for &si in indices {
        let s = &data.samples[si];
        rgb.extend(s.rgb.iter().map(|&v| T::from_f64(v as f64)));
        if let Some(out) = b3.as_mut() {
            let plane = s
                .b3
                .as_ref()
                .ok_or_else(|| Error::dataset("branch III planes not cached"))?;
            out.extend(plane.iter().map(|&v| T::from_f64(v as f64)));
        }
        for _ in 0..k_step {
            let j = rng.gen_range(0..data.k_stored);
            let p = s.points[j];
            pts.extend_from_slice(&[
                T::from_f64(p[0] as f64),
                T::from_f64(p[1] as f64),
                T::from_f64(p[2] as f64),
            ]);
            labels.push(T::from_f64(s.labels[j] as f64));
        }
    }
    Ok((
        BatchInput {
            rgb: Tensor::new(vec![b, hw, hw, 3], rgb)?,
            b3: match b3 {
                Some(d) => Some(Tensor::new(vec![b, hw, hw, 4], d)?),
                None => None,
            },
            points: Tensor::new(vec![b * k_step, 3], pts)?,
            batch: b,
            k: k_step,
        },
        labels,
    ))
}
