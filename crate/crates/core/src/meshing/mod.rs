//! Occupancy grids to triangle meshes: dense grid evaluation, marching
//! cubes with linear edge interpolation, mesh utilities (normals, area
//! sampling, OBJ round trip).

mod tables;

use crate::dogfilter::Image;
use crate::error::{Error, Result};
use crate::model::{DmifNet, ForwardOpts};
use crate::numerics::Scalar;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;
use tables::{CORNER_OFFSETS, EDGE_CORNERS, TRI_TABLE};

pub const MAX_GRID_RESOLUTION: usize = 256;

/// Probability samples at the centers of an R^3 voxel grid over
/// [-0.5, 0.5]^3; index (ix*R + iy)*R + iz.
#[derive(Debug, Clone)]
pub struct OccupancyGrid {
    pub resolution: usize,
    pub values: Vec<f64>,
}

impl OccupancyGrid {
    pub fn new(resolution: usize, values: Vec<f64>) -> Result<Self> {
        if resolution < 8 {
            return Err(Error::config("grid resolution must be at least 8"));
        }
        if values.len() != resolution.pow(3) {
            return Err(Error::shape(format!(
                "grid wants {} values, got {}",
                resolution.pow(3),
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::numeric("grid values must lie in [0,1]"));
        }
        Ok(OccupancyGrid { resolution, values })
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -0.5 + (i as f64 + 0.5) / self.resolution as f64
    }

    #[inline]
    pub fn at(&self, ix: usize, iy: usize, iz: usize) -> f64 {
        self.values[(ix * self.resolution + iy) * self.resolution + iz]
    }

    pub fn voxel_size(&self) -> f64 {
        1.0 / self.resolution as f64
    }

    /// All voxel centers in index order.
    pub fn centers(resolution: usize) -> Vec<[f64; 3]> {
        let c = |i: usize| -0.5 + (i as f64 + 0.5) / resolution as f64;
        let mut out = Vec::with_capacity(resolution.pow(3));
        for ix in 0..resolution {
            for iy in 0..resolution {
                for iz in 0..resolution {
                    out.push([c(ix), c(iy), c(iz)]);
                }
            }
        }
        out
    }

    /// Sample an analytic probability field at every voxel center.
    pub fn from_field(resolution: usize, f: impl Fn([f64; 3]) -> f64) -> Result<Self> {
        let values = Self::centers(resolution).into_iter().map(f).collect();
        OccupancyGrid::new(resolution, values)
    }
}

/// Evaluate the model's fused occupancy over the full grid, in bounded
/// chunks. The mixture weights are frozen from a deterministic probe subset
/// of the voxel centers first, so the result is chunk-size invariant.
pub fn evaluate_grid<T: Scalar>(
    model: &DmifNet<T>,
    img: &Image,
    resolution: usize,
    chunk: usize,
) -> Result<OccupancyGrid> {
    if resolution > MAX_GRID_RESOLUTION {
        return Err(Error::config(format!(
            "grid resolution {resolution} exceeds the {MAX_GRID_RESOLUTION} limit"
        )));
    }
    if resolution < 8 {
        return Err(Error::config("grid resolution must be at least 8"));
    }
    let chunk = chunk.max(64);
    let centers = OccupancyGrid::centers(resolution);
    let alpha = frozen_alpha(model, img, &centers)?;
    let opts = ForwardOpts {
        main_only: false,
        force_alpha: alpha,
    };
    let mut values = Vec::with_capacity(centers.len());
    for piece in centers.chunks(chunk) {
        let out = model.predict(&[img], &[piece.to_vec()], &opts)?;
        values.extend(out.mixed.iter().map(|v| v.clamp(0.0, 1.0)));
    }
    OccupancyGrid::new(resolution, values)
}

/// Gate weights for an image, computed once over a probe subset of points.
pub fn frozen_alpha<T: Scalar>(
    model: &DmifNet<T>,
    img: &Image,
    centers: &[[f64; 3]],
) -> Result<Option<Vec<f64>>> {
    if model.n_branches() == 1 {
        return Ok(None);
    }
    let stride = (centers.len() / 1024).max(1);
    let probe: Vec<[f64; 3]> = centers.iter().step_by(stride).cloned().collect();
    let out = model.predict(&[img], &[probe], &ForwardOpts::default())?;
    Ok(Some(out.alpha[0].clone()))
}

/// Surface samples paired with their face normals.
pub type SampledSurface = (Vec<[f64; 3]>, Vec<[f64; 3]>);

/// Indexed triangle mesh with unit per-vertex normals.
#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Vec<[f64; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn face_normal(&self, t: usize) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        );
        let u = sub(b, a);
        let v = sub(c, a);
        normalize(cross(u, v))
    }

    pub fn face_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (a, b, c) = (
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        );
        0.5 * norm(cross(sub(b, a), sub(c, a)))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.face_area(t)).sum()
    }

    /// Signed volume via the divergence theorem (meaningful for closed
    /// meshes; positive when wound outward).
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                let (a, b, c) = (
                    self.vertices[a as usize],
                    self.vertices[b as usize],
                    self.vertices[c as usize],
                );
                dot(a, cross(b, c)) / 6.0
            })
            .sum()
    }

    fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut counts = HashMap::new();
        for &[a, b, c] in &self.triangles {
            for (u, v) in [(a, b), (b, c), (c, a)] {
                *counts.entry((u.min(v), u.max(v))).or_default() += 1;
            }
        }
        counts
    }

    /// Every edge bordered by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.edge_counts().values().all(|&n| n == 2)
    }

    /// V - E + F over the indexed mesh.
    pub fn euler_characteristic(&self) -> i64 {
        let v = self.vertices.len() as i64;
        let e = self.edge_counts().len() as i64;
        let f = self.triangles.len() as i64;
        v - e + f
    }

    /// Area-weighted surface samples with face normals.
    pub fn sample_surface(&self, n: usize, seed: u64) -> Result<SampledSurface> {
        if self.is_empty() {
            return Err(Error::mesh("cannot sample an empty mesh"));
        }
        let mut cumulative = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for t in 0..self.triangles.len() {
            total += self.face_area(t);
            cumulative.push(total);
        }
        if total <= 0.0 {
            return Err(Error::mesh("mesh has zero surface area"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut points = Vec::with_capacity(n);
        let mut normals = Vec::with_capacity(n);
        for _ in 0..n {
            let r = rng.gen_range(0.0..total);
            let t = cumulative.partition_point(|&c| c < r).min(self.triangles.len() - 1);
            let [ia, ib, ic] = self.triangles[t];
            let (a, b, c) = (
                self.vertices[ia as usize],
                self.vertices[ib as usize],
                self.vertices[ic as usize],
            );
            let mut u: f64 = rng.gen_range(0.0..1.0);
            let mut v: f64 = rng.gen_range(0.0..1.0);
            if u + v > 1.0 {
                u = 1.0 - u;
                v = 1.0 - v;
            }
            points.push([
                a[0] + u * (b[0] - a[0]) + v * (c[0] - a[0]),
                a[1] + u * (b[1] - a[1]) + v * (c[1] - a[1]),
                a[2] + u * (b[2] - a[2]) + v * (c[2] - a[2]),
            ]);
            normals.push(self.face_normal(t));
        }
        Ok((points, normals))
    }

    /// Write as OBJ: `v` records in vertex order, `vn` per vertex, then `f`
    /// triples indexing both (1-based).
    pub fn write_obj(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for v in &self.vertices {
            writeln!(f, "v {} {} {}", v[0], v[1], v[2])?;
        }
        for n in &self.normals {
            writeln!(f, "vn {} {} {}", n[0], n[1], n[2])?;
        }
        for t in &self.triangles {
            writeln!(
                f,
                "f {}//{} {}//{} {}//{}",
                t[0] + 1,
                t[0] + 1,
                t[1] + 1,
                t[1] + 1,
                t[2] + 1,
                t[2] + 1
            )?;
        }
        Ok(())
    }

    pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
        let file = std::fs::File::open(path)?;
        let mut vertices = Vec::new();
        let mut normals = Vec::new();
        let mut triangles = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line?;
            let mut it = line.split_whitespace();
            match it.next() {
                Some("v") => {
                    let v: Vec<f64> = it.take(3).map(|s| s.parse().unwrap_or(0.0)).collect();
                    if v.len() != 3 {
                        return Err(Error::mesh("malformed v record"));
                    }
                    vertices.push([v[0], v[1], v[2]]);
                }
                Some("vn") => {
                    let v: Vec<f64> = it.take(3).map(|s| s.parse().unwrap_or(0.0)).collect();
                    if v.len() != 3 {
                        return Err(Error::mesh("malformed vn record"));
                    }
                    normals.push([v[0], v[1], v[2]]);
                }
                Some("f") => {
                    let idx: Vec<u32> = it
                        .map(|tok| {
                            tok.split('/')
                                .next()
                                .and_then(|s| s.parse::<u32>().ok())
                                .map(|i| i - 1)
                        })
                        .collect::<Option<Vec<u32>>>()
                        .ok_or_else(|| Error::mesh("malformed f record"))?;
                    if idx.len() != 3 {
                        return Err(Error::mesh("only triangle faces are supported"));
                    }
                    triangles.push([idx[0], idx[1], idx[2]]);
                }
                _ => {}
            }
        }
        let mut mesh = TriangleMesh {
            vertices,
            triangles,
            normals,
        };
        if mesh.normals.len() != mesh.vertices.len() {
            mesh.recompute_vertex_normals();
        }
        Ok(mesh)
    }

    pub fn recompute_vertex_normals(&mut self) {
        let mut acc = vec![[0.0f64; 3]; self.vertices.len()];
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangles[t];
            let (pa, pb, pc) = (
                self.vertices[a as usize],
                self.vertices[b as usize],
                self.vertices[c as usize],
            );
            // Cross product length is twice the area: area weighting for free.
            let fnrm = cross(sub(pb, pa), sub(pc, pa));
            for &i in &[a, b, c] {
                for d in 0..3 {
                    acc[i as usize][d] += fnrm[d];
                }
            }
        }
        self.normals = acc
            .into_iter()
            .map(|n| {
                let l = norm(n);
                if l > 0.0 {
                    [n[0] / l, n[1] / l, n[2] / l]
                } else {
                    [0.0, 1.0, 0.0]
                }
            })
            .collect();
    }
}

/// Marching cubes over voxel centers with linear interpolation along cut
/// edges. Corners with value > tau count as inside; triangles are wound so
/// face normals point toward lower occupancy. A grid entirely on one side
/// yields an explicit empty mesh.
pub fn marching_cubes(grid: &OccupancyGrid, tau: f64) -> Result<TriangleMesh> {
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::config(format!("threshold {tau} must lie in (0,1)")));
    }
    let r = grid.resolution;
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    // One shared vertex per cut grid edge: key (corner linear index, axis).
    let mut edge_vertex: HashMap<(u32, u8), u32> = HashMap::new();
    let lin = |ix: usize, iy: usize, iz: usize| -> u32 { ((ix * r + iy) * r + iz) as u32 };

    for ix in 0..r - 1 {
        for iy in 0..r - 1 {
            for iz in 0..r - 1 {
                let corner_val = |ci: usize| -> f64 {
                    let (dx, dy, dz) = CORNER_OFFSETS[ci];
                    grid.at(ix + dx, iy + dy, iz + dz)
                };
                let mut case = 0usize;
                for ci in 0..8 {
                    if corner_val(ci) <= tau {
                        case |= 1 << ci;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let row = &TRI_TABLE[case];
                let mut i = 0;
                while row[i] >= 0 {
                    let mut tri = [0u32; 3];
                    for (slot, &e) in row[i..i + 3].iter().enumerate() {
                        let (ca, cb) = EDGE_CORNERS[e as usize];
                        let (ax, ay, az) = CORNER_OFFSETS[ca];
                        let (bx, by, bz) = CORNER_OFFSETS[cb];
                        let ga = (ix + ax, iy + ay, iz + az);
                        let gb = (ix + bx, iy + by, iz + bz);
                        // Canonical key: the lower corner plus the axis.
                        let (lo, hi) = if (ga.0, ga.1, ga.2) <= (gb.0, gb.1, gb.2) {
                            (ga, gb)
                        } else {
                            (gb, ga)
                        };
                        let axis = if hi.0 != lo.0 {
                            0u8
                        } else if hi.1 != lo.1 {
                            1
                        } else {
                            2
                        };
                        let key = (lin(lo.0, lo.1, lo.2), axis);
                        let vid = *edge_vertex.entry(key).or_insert_with(|| {
                            let va = grid.at(lo.0, lo.1, lo.2);
                            let vb = grid.at(hi.0, hi.1, hi.2);
                            let t = if (vb - va).abs() < 1e-300 {
                                0.5
                            } else {
                                ((tau - va) / (vb - va)).clamp(0.0, 1.0)
                            };
                            let pa = [grid.coord(lo.0), grid.coord(lo.1), grid.coord(lo.2)];
                            let pb = [grid.coord(hi.0), grid.coord(hi.1), grid.coord(hi.2)];
                            vertices.push([
                                pa[0] + t * (pb[0] - pa[0]),
                                pa[1] + t * (pb[1] - pa[1]),
                                pa[2] + t * (pb[2] - pa[2]),
                            ]);
                            (vertices.len() - 1) as u32
                        });
                        tri[slot] = vid;
                    }
                    if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                        triangles.push(tri);
                    }
                    i += 3;
                }
            }
        }
    }

    let mut mesh = TriangleMesh {
        vertices,
        triangles,
        normals: Vec::new(),
    };
    cleanup(&mut mesh);
    orient_outward(&mut mesh, grid, tau);
    mesh.recompute_vertex_normals();
    Ok(mesh)
}

/// Merge vertices within 1e-9, drop triangles below 1e-12 area and unused
/// vertices.
fn cleanup(mesh: &mut TriangleMesh) {
    let quant = |v: f64| (v * 1e9).round() as i64;
    let mut canon: HashMap<(i64, i64, i64), u32> = HashMap::new();
    let mut remap = vec![0u32; mesh.vertices.len()];
    for (i, v) in mesh.vertices.iter().enumerate() {
        let key = (quant(v[0]), quant(v[1]), quant(v[2]));
        remap[i] = *canon.entry(key).or_insert(i as u32);
    }
    let mut triangles = Vec::with_capacity(mesh.triangles.len());
    for &[a, b, c] in &mesh.triangles {
        let t = [remap[a as usize], remap[b as usize], remap[c as usize]];
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            continue;
        }
        let (pa, pb, pc) = (
            mesh.vertices[t[0] as usize],
            mesh.vertices[t[1] as usize],
            mesh.vertices[t[2] as usize],
        );
        if 0.5 * norm(cross(sub(pb, pa), sub(pc, pa))) < 1e-12 {
            continue;
        }
        triangles.push(t);
    }
    // Compact the vertex list to used entries.
    let mut used = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    for t in triangles.iter_mut() {
        for idx in t.iter_mut() {
            let old = *idx as usize;
            if used[old] == u32::MAX {
                used[old] = vertices.len() as u32;
                vertices.push(mesh.vertices[old]);
            }
            *idx = used[old];
        }
    }
    mesh.vertices = vertices;
    mesh.triangles = triangles;
}

/// Flip the global winding if face normals point toward higher occupancy.
fn orient_outward(mesh: &mut TriangleMesh, grid: &OccupancyGrid, tau: f64) {
    if mesh.is_empty() {
        return;
    }
    let h = 0.75 * grid.voxel_size();
    let mut vote = 0.0;
    let n_probe = mesh.triangles.len().min(256);
    for t in 0..n_probe {
        let [a, b, c] = mesh.triangles[t];
        let (pa, pb, pc) = (
            mesh.vertices[a as usize],
            mesh.vertices[b as usize],
            mesh.vertices[c as usize],
        );
        let centroid = [
            (pa[0] + pb[0] + pc[0]) / 3.0,
            (pa[1] + pb[1] + pc[1]) / 3.0,
            (pa[2] + pb[2] + pc[2]) / 3.0,
        ];
        let n = mesh.face_normal(t);
        let probe = |s: f64| -> f64 {
            let p = [
                centroid[0] + s * h * n[0],
                centroid[1] + s * h * n[1],
                centroid[2] + s * h * n[2],
            ];
            sample_trilinear(grid, p)
        };
        // Outward normals should move toward lower occupancy.
        vote += (probe(1.0) - tau) - (probe(-1.0) - tau);
    }
    if vote > 0.0 {
        for t in mesh.triangles.iter_mut() {
            t.swap(1, 2);
        }
    }
}

fn sample_trilinear(grid: &OccupancyGrid, p: [f64; 3]) -> f64 {
    let r = grid.resolution;
    let f = |x: f64| ((x + 0.5) * r as f64 - 0.5).clamp(0.0, (r - 1) as f64);
    let (fx, fy, fz) = (f(p[0]), f(p[1]), f(p[2]));
    let (ix, iy, iz) = (fx.floor() as usize, fy.floor() as usize, fz.floor() as usize);
    let (tx, ty, tz) = (fx - ix as f64, fy - iy as f64, fz - iz as f64);
    let (jx, jy, jz) = ((ix + 1).min(r - 1), (iy + 1).min(r - 1), (iz + 1).min(r - 1));
    let mut acc = 0.0;
    for (dx, wx) in [(ix, 1.0 - tx), (jx, tx)] {
        for (dy, wy) in [(iy, 1.0 - ty), (jy, ty)] {
            for (dz, wz) in [(iz, 1.0 - tz), (jz, tz)] {
                acc += wx * wy * wz * grid.at(dx, dy, dz);
            }
        }
    }
    acc
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}
fn normalize(a: [f64; 3]) -> [f64; 3] {
    let l = norm(a);
    if l > 0.0 {
        [a[0] / l, a[1] / l, a[2] / l]
    } else {
        [0.0, 1.0, 0.0]
    }
}
