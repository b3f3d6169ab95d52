//! Orthographic sphere-traced shading of a shape spec into a small RGB image.

use super::{cross3, dot3, normalize3, ShapeSpec};
use crate::dogfilter::Image;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Orthographic view aimed at the origin from (azimuth, elevation), radians.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct CameraSpec {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Default for CameraSpec {
    fn default() -> Self {
        CameraSpec {
            azimuth: 0.6,
            elevation: 0.35,
        }
    }
}

const EYE_DISTANCE: f64 = 1.2;
const MAX_TRACE: f64 = 3.0;
const HIT_EPS: f64 = 1e-4;
const MAX_STEPS: usize = 128;
const ALBEDO: [f64; 3] = [0.75, 0.58, 0.42];
const LIGHT: [f64; 3] = [0.379049022, 0.758098044, 0.530668631];

/// Render with a white background; the frame covers [-0.5, 0.5]^2 in the
/// image plane. Non-convergent rays are treated as background.
pub fn render(spec: &ShapeSpec, cam: &CameraSpec, height: usize, width: usize) -> Image {
    let (saz, caz) = cam.azimuth.sin_cos();
    let (sel, cel) = cam.elevation.sin_cos();
    let eye_dir = [cel * caz, sel, cel * saz];
    let eye = [
        eye_dir[0] * EYE_DISTANCE,
        eye_dir[1] * EYE_DISTANCE,
        eye_dir[2] * EYE_DISTANCE,
    ];
    let forward = [-eye_dir[0], -eye_dir[1], -eye_dir[2]];
    let right = normalize3(cross3(forward, [0.0, 1.0, 0.0]));
    let up = cross3(right, forward);

    let mut img = Image::new(3, height, width);
    let plane = height * width;
    let mut rows: Vec<(usize, Vec<f64>)> = (0..height).map(|y| (y, vec![0.0; 3 * width])).collect();
    rows.par_iter_mut().for_each(|(y, row)| {
        for x in 0..width {
            let u = (x as f64 + 0.5) / width as f64 - 0.5;
            let v = 0.5 - (*y as f64 + 0.5) / height as f64;
            let origin = [
                eye[0] + u * right[0] + v * up[0],
                eye[1] + u * right[1] + v * up[1],
                eye[2] + u * right[2] + v * up[2],
            ];
            let color = trace(spec, origin, forward);
            for c in 0..3 {
                row[c * width + x] = color[c];
            }
        }
    });
    for (y, row) in rows {
        for c in 0..3 {
            img.data[c * plane + y * width..c * plane + (y + 1) * width]
                .copy_from_slice(&row[c * width..(c + 1) * width]);
        }
    }
    img
}

fn trace(spec: &ShapeSpec, origin: [f64; 3], dir: [f64; 3]) -> [f64; 3] {
    let mut t = 0.0;
    for _ in 0..MAX_STEPS {
        let p = [
            origin[0] + t * dir[0],
            origin[1] + t * dir[1],
            origin[2] + t * dir[2],
        ];
        let d = spec.sdf(p);
        if d < HIT_EPS {
            let n = spec.normal(p, 1e-4);
            let lambert = dot3(n, LIGHT).max(0.0);
            let shade = 0.25 + 0.75 * lambert;
            return [ALBEDO[0] * shade, ALBEDO[1] * shade, ALBEDO[2] * shade];
        }
        t += d.max(HIT_EPS);
        if t > MAX_TRACE {
            break;
        }
    }
    [1.0, 1.0, 1.0]
}
