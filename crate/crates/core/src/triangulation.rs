//! Linear (DLT) two-view triangulation and reprojection error bookkeeping.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};

use crate::error::TriangulationError;
use crate::geometry::{camera_center, project, CameraModel, NormalizedPoint, PixelPoint, RigidTransform};
use crate::matching::Correspondence;

/// `K · [R | t]`, kept factored so triangulation can work in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix {
    pub intrinsics: Matrix3<f64>,
    pub pose: RigidTransform,
}

impl ProjectionMatrix {
    pub fn new(intrinsics: Matrix3<f64>, pose: RigidTransform) -> Self {
        Self { intrinsics, pose }
    }

    pub fn from_camera(cam: &CameraModel, pose: RigidTransform) -> Self {
        Self::new(cam.k(), pose)
    }

    pub fn matrix(&self) -> Matrix3x4<f64> {
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.pose.rotation);
        rt.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.pose.translation);
        self.intrinsics * rt
    }

    fn normalize(&self, px: &PixelPoint) -> Result<NormalizedPoint, TriangulationError> {
        let k_inv = self.intrinsics.try_inverse().ok_or(TriangulationError::AtInfinity)?;
        let h = k_inv * Vector3::new(px.x, px.y, 1.0);
        Ok(h.xy() / h.z)
    }
}

/// A triangulated point and its depth in the two generating cameras.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriangulatedPoint {
    pub point: Vector3<f64>,
    pub depth1: f64,
    pub depth2: f64,
}

// Rows act on (X / length, w) so the system is unchanged when the scene is rescaled.
fn dlt_rows(pose: &RigidTransform, p: &NormalizedPoint, length: f64) -> [Vector4<f64>; 2] {
    let r = &pose.rotation * length;
    let t = &pose.translation;
    let row = |i: usize| Vector4::new(r[(i, 0)], r[(i, 1)], r[(i, 2)], t[i]);
    let (p0, p1, p2) = (row(0), row(1), row(2));
    [p2 * p.x - p0, p2 * p.y - p1]
}

/// DLT triangulation from undistorted normalized coordinates. Depths are not sign-checked.
pub fn triangulate_normalized(
    pose1: &RigidTransform,
    pose2: &RigidTransform,
    n1: &NormalizedPoint,
    n2: &NormalizedPoint,
) -> Result<TriangulatedPoint, TriangulationError> {
    let baseline = (camera_center(pose1) - camera_center(pose2)).norm();
    let length = if baseline > 0.0 { baseline } else { 1.0 };
    let rows1 = dlt_rows(pose1, n1, length);
    let rows2 = dlt_rows(pose2, n2, length);
    let mut a = Matrix4::zeros();
    for (i, r) in rows1.iter().chain(rows2.iter()).enumerate() {
        let r = r.normalize();
        a.set_row(i, &r.transpose());
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(TriangulationError::AtInfinity)?;
    let mut sv: Vec<(f64, usize)> = svd.singular_values.iter().copied().zip(0..).collect();
    sv.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    // Rank below 3 means the two rays do not pin down a point (e.g. zero baseline).
    if sv[2].0 < 1e-12 * sv[0].0 {
        return Err(TriangulationError::AtInfinity);
    }
    let h: Vector4<f64> = v_t.row(sv[3].1).transpose();
    if h.w.abs() < 1e-12 * h.norm() {
        return Err(TriangulationError::AtInfinity);
    }
    let point = h.xyz() * (length / h.w);
    Ok(TriangulatedPoint {
        point,
        depth1: pose1.transform_point(&point).z,
        depth2: pose2.transform_point(&point).z,
    })
}

/// Triangulates one correspondence given in undistorted pixels.
pub fn triangulate_point(
    p1: &ProjectionMatrix,
    p2: &ProjectionMatrix,
    x1: &PixelPoint,
    x2: &PixelPoint,
) -> Result<Vector3<f64>, TriangulationError> {
    let t = triangulate_normalized(&p1.pose, &p2.pose, &p1.normalize(x1)?, &p2.normalize(x2)?)?;
    if t.depth1 <= 0.0 || t.depth2 <= 0.0 {
        return Err(TriangulationError::BehindCamera);
    }
    Ok(t.point)
}

/// Triangulated points together with the index of the correspondence each came from.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangulatedSet {
    pub points: Vec<Vector3<f64>>,
    pub sources: Vec<usize>,
    /// Correspondences that failed, with the reason.
    pub dropped: Vec<(usize, TriangulationError)>,
}

impl TriangulatedSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Position of the point triangulated from correspondence `source`.
    pub fn position_of(&self, source: usize) -> Option<usize> {
        self.sources.iter().position(|&s| s == source)
    }
}

/// Triangulates `(index, correspondence)` pairs; failures are reported in `dropped`.
pub fn triangulate_set(
    p1: &ProjectionMatrix,
    p2: &ProjectionMatrix,
    corrs: &[(usize, Correspondence)],
) -> Result<TriangulatedSet, TriangulationError> {
    let mut set = TriangulatedSet::default();
    for (idx, c) in corrs {
        match triangulate_point(p1, p2, &c.x1, &c.x2) {
            Ok(p) => {
                set.points.push(p);
                set.sources.push(*idx);
            }
            Err(e) => set.dropped.push((*idx, e)),
        }
    }
    if set.points.is_empty() {
        return Err(TriangulationError::EmptyResult);
    }
    Ok(set)
}

/// Measured pixel of point `point` in camera `camera`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub point: usize,
    pub pixel: PixelPoint,
}

/// Mean Euclidean distance between projections (with distortion) and measurements.
pub fn mean_reprojection_error(
    cameras: &[(CameraModel, RigidTransform)],
    points: &[Vector3<f64>],
    observations: &[Observation],
) -> Result<f64, TriangulationError> {
    if observations.is_empty() {
        return Err(TriangulationError::NoObservations);
    }
    let mut sum = 0.0;
    for (i, obs) in observations.iter().enumerate() {
        let (cam, pose) = cameras.get(obs.camera).ok_or(TriangulationError::InvalidIndex(i))?;
        let x = points.get(obs.point).ok_or(TriangulationError::InvalidIndex(i))?;
        sum += (project(cam, pose, x)? - obs.pixel).norm();
    }
    Ok(sum / observations.len() as f64)
}
