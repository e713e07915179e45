//! Python bindings. Matrices cross the boundary as nested lists, files as JSON text.

use std::path::Path;

use hybridcal::epipolar::{self, FundamentalMatrix, RansacConfig};
use hybridcal::geometry::{self, PixelPoint};
use hybridcal::io::{self, CorrespondenceFile, GroundTruthFile, NetworkFile, PoseFile, SceneFiles};
use hybridcal::matching::Correspondence;
use hybridcal::rig_network::{calibrate_network, PipelineOptions};
use hybridcal::synthetic::{self, GroundTruth, SceneConfig};
use nalgebra::{Matrix3, Vector3};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(hybridcal_py, HybridcalError, PyException, "Raised for any library failure; the message starts with the error name.");

trait Named: std::fmt::Display {
    fn name(&self) -> &'static str;
}

macro_rules! named {
    ($($t:ty),*) => {$(
        impl Named for $t {
            fn name(&self) -> &'static str {
                <$t>::name(self)
            }
        }
    )*};
}

named!(
    hybridcal::GeometryError,
    hybridcal::EpipolarError,
    hybridcal::NetworkError,
    hybridcal::SchemaError,
    hybridcal::SyntheticError
);

fn err<E: Named>(e: E) -> PyErr {
    HybridcalError::new_err(format!("{}: {}", e.name(), e))
}

fn matrix(m: [[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|r, c| m[r][c])
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
}

fn correspondences(x1: &[[f64; 2]], x2: &[[f64; 2]]) -> PyResult<Vec<Correspondence>> {
    if x1.len() != x2.len() {
        return Err(HybridcalError::new_err("InvalidInput: point lists differ in length"));
    }
    Ok(x1
        .iter()
        .zip(x2)
        .map(|(a, b)| Correspondence::new(PixelPoint::new(a[0], a[1]), PixelPoint::new(b[0], b[1])))
        .collect())
}

#[pyclass(name = "RigidTransform", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyRigidTransform(geometry::RigidTransform);

#[pymethods]
impl PyRigidTransform {
    #[new]
    fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> PyResult<Self> {
        geometry::RigidTransform::new(matrix(rotation), Vector3::from(translation)).map(Self).map_err(err)
    }

    #[staticmethod]
    fn identity() -> Self {
        Self(geometry::RigidTransform::identity())
    }

    /// Builds a transform from Z-Y-X Euler angles `(psi, theta, phi)` in degrees.
    #[staticmethod]
    fn from_euler_deg(angles: [f64; 3], translation: [f64; 3]) -> Self {
        let r = geometry::rotation_from_euler(&geometry::EulerAngles::new(angles[0], angles[1], angles[2]));
        Self(geometry::RigidTransform { rotation: r, translation: Vector3::from(translation) })
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        rows(&self.0.rotation)
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        self.0.translation.into()
    }

    fn euler_deg(&self) -> [f64; 3] {
        geometry::euler_from_rotation(&self.0.rotation).angles.as_array()
    }

    /// `self ∘ inner`: apply `inner` first.
    fn compose(&self, inner: &PyRigidTransform) -> Self {
        Self(geometry::compose(&self.0, &inner.0))
    }

    fn inverse(&self) -> Self {
        Self(geometry::invert(&self.0))
    }

    fn transform_point(&self, p: [f64; 3]) -> [f64; 3] {
        self.0.transform_point(&Vector3::from(p)).into()
    }

    fn camera_center(&self) -> [f64; 3] {
        geometry::camera_center(&self.0).into()
    }

    fn __repr__(&self) -> String {
        let e = self.euler_deg();
        let t = self.0.translation;
        format!("RigidTransform(euler_deg=[{:.6}, {:.6}, {:.6}], translation=[{}, {}, {}])", e[0], e[1], e[2], t.x, t.y, t.z)
    }
}

#[pyclass(name = "CameraModel", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyCameraModel(geometry::CameraModel);

#[pymethods]
impl PyCameraModel {
    #[new]
    #[pyo3(signature = (fx, fy, cx, cy, width, height, kappa = [0.0, 0.0, 0.0]))]
    fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32, kappa: [f64; 3]) -> PyResult<Self> {
        geometry::CameraModel::new(fx, fy, cx, cy, kappa, width, height).map(Self).map_err(err)
    }

    #[getter]
    fn k(&self) -> [[f64; 3]; 3] {
        rows(&self.0.k())
    }

    #[getter]
    fn kappa(&self) -> [f64; 3] {
        self.0.kappa
    }

    fn project(&self, pose: &PyRigidTransform, point: [f64; 3]) -> PyResult<[f64; 2]> {
        geometry::project(&self.0, &pose.0, &Vector3::from(point)).map(Into::into).map_err(err)
    }

    fn undistort_pixel(&self, pixel: [f64; 2]) -> PyResult<[f64; 2]> {
        self.0.undistort_pixel(&PixelPoint::from(pixel)).map(Into::into).map_err(err)
    }

    fn __repr__(&self) -> String {
        let c = &self.0;
        format!("CameraModel(fx={}, fy={}, cx={}, cy={}, kappa={:?})", c.fx, c.fy, c.cx, c.cy, c.kappa)
    }
}

/// Normalized fundamental matrix from matched pixels (at least eight).
#[pyfunction]
fn eight_point(x1: Vec<[f64; 2]>, x2: Vec<[f64; 2]>) -> PyResult<[[f64; 3]; 3]> {
    let f = epipolar::eight_point(&correspondences(&x1, &x2)?).map_err(err)?;
    Ok(rows(f.matrix()))
}

#[pyfunction]
fn fundamental_from_calibration(k1: [[f64; 3]; 3], k2: [[f64; 3]; 3], pose: &PyRigidTransform) -> PyResult<[[f64; 3]; 3]> {
    let f = epipolar::fundamental_from_calibration(&matrix(k1), &matrix(k2), &pose.0).map_err(err)?;
    Ok(rows(f.matrix()))
}

/// Relative pose (unit translation) selected by the chirality test.
#[pyfunction]
fn recover_pose(
    f: [[f64; 3]; 3],
    k1: [[f64; 3]; 3],
    k2: [[f64; 3]; 3],
    x1: Vec<[f64; 2]>,
    x2: Vec<[f64; 2]>,
) -> PyResult<PyRigidTransform> {
    let f = FundamentalMatrix::from_matrix(matrix(f));
    let h = epipolar::recover_pose(&f, &matrix(k1), &matrix(k2), &correspondences(&x1, &x2)?).map_err(err)?;
    Ok(PyRigidTransform(h.transform()))
}

#[pyfunction]
fn sampson_distances(f: [[f64; 3]; 3], x1: Vec<[f64; 2]>, x2: Vec<[f64; 2]>) -> PyResult<Vec<f64>> {
    let f = FundamentalMatrix::from_matrix(matrix(f));
    Ok(correspondences(&x1, &x2)?.iter().map(|c| epipolar::sampson_distance(&f, c)).collect())
}

/// Epipolar line `(a, b, c)` in the second image, normalized so that `a² + b² = 1`.
#[pyfunction]
fn epipolar_line(f: [[f64; 3]; 3], x1: [f64; 2]) -> PyResult<[f64; 3]> {
    let f = FundamentalMatrix::from_matrix(matrix(f));
    epipolar::epipolar_line(&f, &PixelPoint::from(x1)).map(Into::into).map_err(err)
}

/// The reference desk scene configuration as JSON.
#[pyfunction]
fn desk_config() -> PyResult<String> {
    io::to_json(&SceneConfig::desk()).map_err(err)
}

/// Writes network, ground truth and correspondence files for a scene configuration.
#[pyfunction]
fn simulate(config_json: &str, out_dir: &str) -> PyResult<()> {
    let cfg: SceneConfig = io::from_json(config_json).map_err(err)?;
    let scene = synthetic::generate_scene(&cfg).map_err(err)?;
    SceneFiles::from_scene(&scene).write(Path::new(out_dir)).map_err(err)
}

/// Calibrates a network from a network file and a directory of correspondence files.
/// Returns the pose file as JSON.
#[pyfunction]
#[pyo3(signature = (network_path, correspondence_dir, seed = 0, ransac_threshold = None, global_refine = true))]
fn calibrate(
    network_path: &str,
    correspondence_dir: &str,
    seed: u64,
    ransac_threshold: Option<f64>,
    global_refine: bool,
) -> PyResult<String> {
    let (network, constraints) =
        io::read_json::<NetworkFile>(Path::new(network_path)).and_then(|f| f.to_network()).map_err(err)?;
    let files: Vec<CorrespondenceFile> = io::read_correspondence_dir(Path::new(correspondence_dir))
        .map_err(err)?
        .into_iter()
        .map(|(_, f)| f)
        .collect();
    let corrs = io::wide_correspondences(&network, &files).map_err(err)?;
    let defaults = RansacConfig::default();
    let ransac = RansacConfig { seed, threshold: ransac_threshold.unwrap_or(defaults.threshold), ..defaults };
    let options = PipelineOptions { ransac, global_refine, ..Default::default() };
    let result = calibrate_network(&network, &corrs, &constraints, &options).map_err(err)?;
    io::to_json(&PoseFile::from_calibration(&result, &network).map_err(err)?).map_err(err)
}

/// Compares a pose file with ground truth, both given as JSON. Returns the report as JSON.
#[pyfunction]
fn evaluate(truth_json: &str, poses_json: &str) -> PyResult<String> {
    let truth = GroundTruth::try_from(&io::from_json::<GroundTruthFile>(truth_json).map_err(err)?).map_err(err)?;
    let recovered = io::from_json::<PoseFile>(poses_json).and_then(|p| p.to_recovered()).map_err(err)?;
    let report = synthetic::evaluate(&truth, &recovered).map_err(err)?;
    io::to_json(&report).map_err(err)
}

#[pymodule]
pub fn hybridcal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HybridcalError", m.py().get_type::<HybridcalError>())?;
    m.add_class::<PyRigidTransform>()?;
    m.add_class::<PyCameraModel>()?;
    m.add_function(wrap_pyfunction!(eight_point, m)?)?;
    m.add_function(wrap_pyfunction!(fundamental_from_calibration, m)?)?;
    m.add_function(wrap_pyfunction!(recover_pose, m)?)?;
    m.add_function(wrap_pyfunction!(sampson_distances, m)?)?;
    m.add_function(wrap_pyfunction!(epipolar_line, m)?)?;
    m.add_function(wrap_pyfunction!(desk_config, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
