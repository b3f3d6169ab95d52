//! Procedural training data: parametric solids with exact signed distance
//! functions, orthographic renders, and occupancy-labeled point samples.

pub mod dataset;
pub mod render;

pub use dataset::{build_dataset, load_manifest, DataConfig, Dataset, ManifestEntry};
pub use render::{render, CameraSpec};

use crate::error::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Solid primitives with exact signed distance functions, defined in the
/// object frame centered at the origin.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrimitiveKind {
    Sphere { radius: f64 },
    #[serde(rename = "box")]
    Cuboid { half_extents: [f64; 3] },
    Torus { major: f64, minor: f64 },
    Capsule { half_length: f64, radius: f64 },
}

impl PrimitiveKind {
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        match *self {
            PrimitiveKind::Sphere { radius } => norm3(p) - radius,
            PrimitiveKind::Cuboid { half_extents: h } => {
                let q = [p[0].abs() - h[0], p[1].abs() - h[1], p[2].abs() - h[2]];
                let outside = norm3([q[0].max(0.0), q[1].max(0.0), q[2].max(0.0)]);
                let inside = q[0].max(q[1]).max(q[2]).min(0.0);
                outside + inside
            }
            PrimitiveKind::Torus { major, minor } => {
                let ring = (p[0] * p[0] + p[2] * p[2]).sqrt() - major;
                (ring * ring + p[1] * p[1]).sqrt() - minor
            }
            PrimitiveKind::Capsule {
                half_length,
                radius,
            } => {
                let y = p[1] - p[1].clamp(-half_length, half_length);
                norm3([p[0], y, p[2]]) - radius
            }
        }
    }

    /// Radius of a bounding ball centered at the primitive origin.
    pub fn bounding_radius(&self) -> f64 {
        match *self {
            PrimitiveKind::Sphere { radius } => radius,
            PrimitiveKind::Cuboid { half_extents: h } => norm3(h),
            PrimitiveKind::Torus { major, minor } => major + minor,
            PrimitiveKind::Capsule {
                half_length,
                radius,
            } => half_length + radius,
        }
    }

    fn scaled(&self, s: f64) -> PrimitiveKind {
        match *self {
            PrimitiveKind::Sphere { radius } => PrimitiveKind::Sphere { radius: radius * s },
            PrimitiveKind::Cuboid { half_extents: h } => PrimitiveKind::Cuboid {
                half_extents: [h[0] * s, h[1] * s, h[2] * s],
            },
            PrimitiveKind::Torus { major, minor } => PrimitiveKind::Torus {
                major: major * s,
                minor: minor * s,
            },
            PrimitiveKind::Capsule {
                half_length,
                radius,
            } => PrimitiveKind::Capsule {
                half_length: half_length * s,
                radius: radius * s,
            },
        }
    }
}

/// A posed solid: one primitive or a union of two, rotated (unit quaternion,
/// (w,x,y,z)) and translated inside the unit cube.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ShapeSpec {
    pub id: String,
    /// (primitive, offset in the object frame); one part, or two for unions.
    pub parts: Vec<(PrimitiveKind, [f64; 3])>,
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
}

impl ShapeSpec {
    /// Exact signed distance: negative inside, positive outside, zero on the
    /// surface; unions combine by pointwise minimum.
    pub fn sdf(&self, p: [f64; 3]) -> f64 {
        let q = rotate_t(self.rotation, sub3(p, self.translation));
        let mut d = f64::INFINITY;
        for (prim, off) in &self.parts {
            d = d.min(prim.sdf(sub3(q, *off)));
        }
        d
    }

    pub fn kind_name(&self) -> &'static str {
        if self.parts.len() > 1 {
            return "union";
        }
        match self.parts[0].0 {
            PrimitiveKind::Sphere { .. } => "sphere",
            PrimitiveKind::Cuboid { .. } => "box",
            PrimitiveKind::Torus { .. } => "torus",
            PrimitiveKind::Capsule { .. } => "capsule",
        }
    }

    pub fn bounding_radius(&self) -> f64 {
        self.parts
            .iter()
            .map(|(prim, off)| norm3(*off) + prim.bounding_radius())
            .fold(0.0, f64::max)
    }

    /// Shape must fit inside [-0.45, 0.45]^3 with positive parameters.
    pub fn validate(&self) -> Result<()> {
        if self.parts.is_empty() || self.parts.len() > 2 {
            return Err(Error::config("shape must have 1 or 2 parts"));
        }
        let br = self.bounding_radius();
        for t in self.translation {
            if t.abs() + br > 0.45 + 1e-9 {
                return Err(Error::config(format!(
                    "shape {} does not fit inside the working cube",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// Outward surface normal from central differences of the SDF.
    pub fn normal(&self, p: [f64; 3], h: f64) -> [f64; 3] {
        let g = [
            self.sdf([p[0] + h, p[1], p[2]]) - self.sdf([p[0] - h, p[1], p[2]]),
            self.sdf([p[0], p[1] + h, p[2]]) - self.sdf([p[0], p[1] - h, p[2]]),
            self.sdf([p[0], p[1], p[2] + h]) - self.sdf([p[0], p[1], p[2] - h]),
        ];
        let n = norm3(g);
        if n > 0.0 {
            [g[0] / n, g[1] / n, g[2] / n]
        } else {
            [0.0, 1.0, 0.0]
        }
    }
}

pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn normalize3(v: [f64; 3]) -> [f64; 3] {
    let n = norm3(v);
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Rotate by the inverse of a unit quaternion (world -> object frame).
fn rotate_t(q: [f64; 4], p: [f64; 3]) -> [f64; 3] {
    rotate([q[0], -q[1], -q[2], -q[3]], p)
}

/// Rotate by a unit quaternion (w,x,y,z).
pub fn rotate(q: [f64; 4], p: [f64; 3]) -> [f64; 3] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let uv = cross3([x, y, z], p);
    let uuv = cross3([x, y, z], uv);
    [
        p[0] + 2.0 * (w * uv[0] + uuv[0]),
        p[1] + 2.0 * (w * uv[1] + uuv[1]),
        p[2] + 2.0 * (w * uv[2] + uuv[2]),
    ]
}

/// Uniform random unit quaternion.
fn random_quat(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let u1: f64 = rng.gen_range(0.0..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let u3: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    [a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos()]
}

fn random_primitive(kind: &str, rng: &mut ChaCha8Rng, scale: f64) -> Result<PrimitiveKind> {
    let p = match kind {
        "sphere" => PrimitiveKind::Sphere {
            radius: rng.gen_range(0.14..0.30),
        },
        "box" => PrimitiveKind::Cuboid {
            half_extents: [
                rng.gen_range(0.08..0.24),
                rng.gen_range(0.08..0.24),
                rng.gen_range(0.08..0.24),
            ],
        },
        "torus" => {
            let major = rng.gen_range(0.14..0.24);
            PrimitiveKind::Torus {
                major,
                minor: rng.gen_range(0.04..(0.10f64).min(major * 0.6)),
            }
        }
        "capsule" => PrimitiveKind::Capsule {
            half_length: rng.gen_range(0.08..0.20),
            radius: rng.gen_range(0.06..0.13),
        },
        other => return Err(Error::config(format!("unknown primitive kind {other}"))),
    };
    Ok(p.scaled(scale))
}

/// Deterministic random shape of the given kind, guaranteed to satisfy
/// [`ShapeSpec::validate`].
pub fn random_shape(kind: &str, id: &str, seed: u64) -> Result<ShapeSpec> {
    let mut rng = crate::numerics::init::name_rng(seed, id);
    let mut parts: Vec<(PrimitiveKind, [f64; 3])> = Vec::new();
    if kind == "union" {
        let kinds = ["sphere", "box", "torus", "capsule"];
        for _ in 0..2 {
            let k = kinds[rng.gen_range(0..kinds.len())];
            let prim = random_primitive(k, &mut rng, 0.62)?;
            let off = [
                rng.gen_range(-0.12..0.12),
                rng.gen_range(-0.12..0.12),
                rng.gen_range(-0.12..0.12),
            ];
            parts.push((prim, off));
        }
    } else {
        parts.push((random_primitive(kind, &mut rng, 1.0)?, [0.0; 3]));
    }
    let rotation = random_quat(&mut rng);
    let mut spec = ShapeSpec {
        id: id.to_string(),
        parts,
        rotation,
        translation: [0.0; 3],
    };
    // Shrink so a translation margin always exists, then place.
    let br = spec.bounding_radius();
    let max_br = 0.34;
    if br > max_br {
        let s = max_br / br;
        for (prim, off) in spec.parts.iter_mut() {
            *prim = prim.scaled(s);
            for o in off.iter_mut() {
                *o *= s;
            }
        }
    }
    let margin = 0.45 - spec.bounding_radius();
    spec.translation = [
        rng.gen_range(-margin..margin),
        rng.gen_range(-margin..margin),
        rng.gen_range(-margin..margin),
    ];
    spec.validate()?;
    Ok(spec)
}

/// Project a point onto the surface by Newton steps along the SDF gradient.
fn project_to_surface(spec: &ShapeSpec, mut p: [f64; 3]) -> [f64; 3] {
    for _ in 0..12 {
        let d = spec.sdf(p);
        if d.abs() < 1e-7 {
            break;
        }
        let n = spec.normal(p, 1e-5);
        p = [p[0] - d * n[0], p[1] - d * n[1], p[2] - d * n[2]];
    }
    p
}

/// K query points with occupancy labels: half uniform in [-0.5,0.5]^3, half
/// near the surface (projected surface point plus normal jitter, sigma 0.02,
/// clamped to 5 sigma). Labels are 1 exactly when sdf < 0; the boundary
/// counts as outside.
pub fn sample_points(spec: &ShapeSpec, k: usize, seed: u64) -> (Vec<[f64; 3]>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ crate::numerics::init::fnv1a(spec.id.as_bytes()));
    let k_uniform = k / 2;
    let mut points = Vec::with_capacity(k);
    for _ in 0..k_uniform {
        points.push([
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        ]);
    }
    let sigma = 0.02;
    while points.len() < k {
        let start = [
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
            rng.gen_range(-0.5..0.5),
        ];
        let s = project_to_surface(spec, start);
        let n = spec.normal(s, 1e-5);
        // Box-Muller standard normal, clamped to +-5 sigma.
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let z = (-2.0 * u1.ln()).sqrt() * u2.cos();
        let d = (sigma * z).clamp(-5.0 * sigma, 5.0 * sigma);
        let p = [
            (s[0] + d * n[0]).clamp(-0.55, 0.55),
            (s[1] + d * n[1]).clamp(-0.55, 0.55),
            (s[2] + d * n[2]).clamp(-0.55, 0.55),
        ];
        points.push(p);
    }
    let labels = points
        .iter()
        .map(|&p| if spec.sdf(p) < 0.0 { 1u8 } else { 0u8 })
        .collect();
    (points, labels)
}
