//! Python bindings: the shape primitives, DoG preprocessing, marching cubes,
//! the reconstruction metrics and trained-model inference.

use dmif_core::dogfilter;
use dmif_core::meshing;
use dmif_core::metrics;
use dmif_core::model::{self, ForwardOpts, LoadedModel, ModelHyper};
use dmif_core::synthdata::{self, CameraSpec, PrimitiveKind, ShapeSpec};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use std::path::PathBuf;

fn err(e: dmif_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A posed parametric solid with an exact signed distance function.
#[pyclass(name = "Shape")]
#[derive(Clone)]
struct PyShape {
    inner: ShapeSpec,
}

fn solo(kind: PrimitiveKind) -> ShapeSpec {
    ShapeSpec {
        id: "py".into(),
        parts: vec![(kind, [0.0; 3])],
        rotation: [1.0, 0.0, 0.0, 0.0],
        translation: [0.0; 3],
    }
}

#[pymethods]
impl PyShape {
    #[staticmethod]
    fn sphere(radius: f64) -> PyShape {
        PyShape {
            inner: solo(PrimitiveKind::Sphere { radius }),
        }
    }

    #[staticmethod]
    #[pyo3(name = "box")]
    fn cuboid(hx: f64, hy: f64, hz: f64) -> PyShape {
        PyShape {
            inner: solo(PrimitiveKind::Cuboid {
                half_extents: [hx, hy, hz],
            }),
        }
    }

    #[staticmethod]
    fn torus(major: f64, minor: f64) -> PyShape {
        PyShape {
            inner: solo(PrimitiveKind::Torus { major, minor }),
        }
    }

    #[staticmethod]
    fn capsule(half_length: f64, radius: f64) -> PyShape {
        PyShape {
            inner: solo(PrimitiveKind::Capsule {
                half_length,
                radius,
            }),
        }
    }

    /// Deterministic random shape of a kind: sphere|box|torus|capsule|union.
    #[staticmethod]
    fn random(kind: &str, id: &str, seed: u64) -> PyResult<PyShape> {
        Ok(PyShape {
            inner: synthdata::random_shape(kind, id, seed).map_err(err)?,
        })
    }

    fn sdf(&self, x: f64, y: f64, z: f64) -> f64 {
        self.inner.sdf([x, y, z])
    }

    /// Orthographic shaded render; returns (rgb bytes row-major, height, width).
    fn render(&self, size: usize, azimuth: f64, elevation: f64) -> (Vec<u8>, usize, usize) {
        let img = synthdata::render(&self.inner, &CameraSpec { azimuth, elevation }, size, size);
        let n = size * size;
        let mut rgb = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                rgb.push((img.data[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        (rgb, size, size)
    }

    /// Occupancy-labeled query points: ([(x,y,z)...], [0/1 labels...]).
    fn sample_points(&self, k: usize, seed: u64) -> (Vec<(f64, f64, f64)>, Vec<u8>) {
        let (pts, labels) = synthdata::sample_points(&self.inner, k, seed);
        (pts.into_iter().map(|p| (p[0], p[1], p[2])).collect(), labels)
    }
}

/// Separable Gaussian blur of a single-channel row-major image.
#[pyfunction]
fn gaussian_blur(data: Vec<f64>, height: usize, width: usize, sigma: f64) -> PyResult<Vec<f64>> {
    let img = dogfilter::Image::from_data(1, height, width, data).map_err(err)?;
    Ok(dogfilter::gaussian_blur(&img, sigma).map_err(err)?.data)
}

/// Difference of two Gaussian blurs (sigma_high minus sigma_low).
#[pyfunction]
fn dog_map(
    data: Vec<f64>,
    height: usize,
    width: usize,
    sigma_low: f64,
    sigma_high: f64,
) -> PyResult<Vec<f64>> {
    let img = dogfilter::Image::from_data(1, height, width, data).map_err(err)?;
    let spec = dogfilter::GaussianScaleSpec {
        sigmas: vec![sigma_low, sigma_high],
        truncation: 3.0,
    };
    Ok(dogfilter::dog_map(&img, &spec, 0).map_err(err)?.data)
}

/// Marching cubes over an R^3 grid of probabilities in [-0.5,0.5]^3 voxel
/// centers; returns (vertices, triangles, normals).
#[pyfunction]
#[allow(clippy::type_complexity)]
fn marching_cubes(
    values: Vec<f64>,
    resolution: usize,
    tau: f64,
) -> PyResult<(
    Vec<(f64, f64, f64)>,
    Vec<(u32, u32, u32)>,
    Vec<(f64, f64, f64)>,
)> {
    let grid = meshing::OccupancyGrid::new(resolution, values).map_err(err)?;
    let mesh = meshing::marching_cubes(&grid, tau).map_err(err)?;
    Ok((
        mesh.vertices.iter().map(|v| (v[0], v[1], v[2])).collect(),
        mesh.triangles.iter().map(|t| (t[0], t[1], t[2])).collect(),
        mesh.normals.iter().map(|n| (n[0], n[1], n[2])).collect(),
    ))
}

fn to_arr(points: Vec<(f64, f64, f64)>) -> Vec<[f64; 3]> {
    points.into_iter().map(|(x, y, z)| [x, y, z]).collect()
}

#[pyfunction]
fn chamfer_l1(a: Vec<(f64, f64, f64)>, b: Vec<(f64, f64, f64)>) -> PyResult<f64> {
    metrics::chamfer_l1(&to_arr(a), &to_arr(b)).map_err(err)
}

#[pyfunction]
fn iou(pred: Vec<bool>, gt: Vec<bool>) -> PyResult<f64> {
    metrics::iou(&pred, &gt).map_err(err)
}

#[pyfunction]
fn normal_consistency(
    pred_points: Vec<(f64, f64, f64)>,
    pred_normals: Vec<(f64, f64, f64)>,
    gt_points: Vec<(f64, f64, f64)>,
    gt_normals: Vec<(f64, f64, f64)>,
) -> PyResult<f64> {
    metrics::normal_consistency(
        &to_arr(pred_points),
        &to_arr(pred_normals),
        &to_arr(gt_points),
        &to_arr(gt_normals),
    )
    .map_err(err)
}

/// The four-branch occupancy network.
#[pyclass(name = "Model")]
struct PyModel {
    inner: LoadedModel,
}

fn load_image(path: &str) -> PyResult<dogfilter::Image> {
    dogfilter::Image::load_png(&PathBuf::from(path)).map_err(err)
}

#[pymethods]
impl PyModel {
    /// Load a trained checkpoint.
    #[staticmethod]
    fn load(path: &str) -> PyResult<PyModel> {
        Ok(PyModel {
            inner: model::load_model(&PathBuf::from(path)).map_err(err)?,
        })
    }

    /// Freshly initialized model (for smoke tests and fine-tuning setups).
    #[staticmethod]
    fn untrained(seed: u64) -> PyResult<PyModel> {
        let hyper = ModelHyper::default();
        Ok(PyModel {
            inner: LoadedModel::F32(
                Box::new(model::DmifNet::<f32>::new(hyper, seed).map_err(err)?),
                None,
            ),
        })
    }

    fn image_size(&self) -> usize {
        self.inner.hyper().image_size
    }

    fn n_branches(&self) -> usize {
        self.inner.hyper().variant.branches()
    }

    /// Fused occupancy probabilities plus branch weights for one image:
    /// returns (mixed probabilities, alpha).
    fn predict(
        &self,
        image_path: &str,
        points: Vec<(f64, f64, f64)>,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let img = load_image(image_path)?;
        let pts = vec![to_arr(points)];
        let out = match &self.inner {
            LoadedModel::F32(m, _) => m.predict(&[&img], &pts, &ForwardOpts::default()),
            LoadedModel::F64(m, _) => m.predict(&[&img], &pts, &ForwardOpts::default()),
        }
        .map_err(err)?;
        Ok((out.mixed, out.alpha[0].clone()))
    }

    /// Reconstruct a mesh from an image; returns (vertices, triangles).
    #[allow(clippy::type_complexity)]
    fn reconstruct(
        &self,
        image_path: &str,
        resolution: usize,
        tau: f64,
    ) -> PyResult<(Vec<(f64, f64, f64)>, Vec<(u32, u32, u32)>)> {
        let img = load_image(image_path)?;
        let grid = match &self.inner {
            LoadedModel::F32(m, _) => meshing::evaluate_grid(m, &img, resolution, 4096),
            LoadedModel::F64(m, _) => meshing::evaluate_grid(m, &img, resolution, 4096),
        }
        .map_err(err)?;
        let mesh = meshing::marching_cubes(&grid, tau).map_err(err)?;
        Ok((
            mesh.vertices.iter().map(|v| (v[0], v[1], v[2])).collect(),
            mesh.triangles.iter().map(|t| (t[0], t[1], t[2])).collect(),
        ))
    }
}

#[pymodule]
fn dmif_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyShape>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gaussian_blur, m)?)?;
    m.add_function(wrap_pyfunction!(dog_map, m)?)?;
    m.add_function(wrap_pyfunction!(marching_cubes, m)?)?;
    m.add_function(wrap_pyfunction!(chamfer_l1, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(normal_consistency, m)?)?;
    Ok(())
}
