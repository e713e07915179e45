//! Rigid transforms, Euler angles and the pinhole camera with radial distortion.

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::GeometryError;

/// Pixel coordinates in a sensor.
pub type PixelPoint = Vector2<f64>;
/// Camera-normalized image coordinates (`X/Z`, `Y/Z`).
pub type NormalizedPoint = Vector2<f64>;

const ORTHONORMAL_TOL: f64 = 1e-12;
const UNDISTORT_STEP_TOL: f64 = 1e-12;
const UNDISTORT_MAX_ITERS: usize = 50;

/// An element of SE(3) mapping points from a source frame into a target frame:
/// `x_target = rotation * x_source + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, validating that `rotation` is a proper rotation.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        let ortho = orthonormality_error(&rotation);
        let det = rotation.determinant();
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if ortho >= ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(GeometryError::NotARotation { orthonormality: ortho, determinant: det });
        }
        Ok(Self { rotation, translation })
    }

    /// Builds a transform after projecting `rotation` onto the nearest rotation matrix.
    pub fn from_parts_repaired(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: nearest_rotation(&rotation),
            translation,
        }
    }

    /// Builds the transform from a camera orientation and optical center (`t = -R C`).
    pub fn from_rotation_center(rotation: Matrix3<f64>, center: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation: -(rotation * center),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Homogeneous 4x4 matrix form.
    pub fn to_homogeneous(&self) -> nalgebra::Matrix4<f64> {
        let mut m = nalgebra::Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Rotation stored row-major, the layout used by the JSON files.
    pub fn rotation_row_major(&self) -> [f64; 9] {
        let r = &self.rotation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]
    }

    pub fn from_row_major(rotation: [f64; 9], translation: [f64; 3]) -> Result<Self, GeometryError> {
        Self::new(Matrix3::from_row_slice(&rotation), Vector3::from(translation))
    }
}

/// `outer ∘ inner`: if `inner` maps A to B and `outer` maps B to C, the result maps A to C.
pub fn compose(outer: &RigidTransform, inner: &RigidTransform) -> RigidTransform {
    let mut rotation = outer.rotation * inner.rotation;
    if orthonormality_error(&rotation) > ORTHONORMAL_TOL {
        rotation = nearest_rotation(&rotation);
    }
    RigidTransform {
        rotation,
        translation: outer.rotation * inner.translation + outer.translation,
    }
}

pub fn invert(e: &RigidTransform) -> RigidTransform {
    let rt = e.rotation.transpose();
    RigidTransform {
        rotation: rt,
        translation: -(rt * e.translation),
    }
}

/// Optical center `C = -Rᵀ t` of a camera whose extrinsic is `e`.
pub fn camera_center(e: &RigidTransform) -> Vector3<f64> {
    -(e.rotation.transpose() * e.translation)
}

/// `‖RᵀR − I‖_F`.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

/// Nearest rotation in the Frobenius sense (orthogonal polar factor, det forced to +1).
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

/// Skew-symmetric cross-product matrix `[v]×`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation matrix for a rotation vector (axis * angle in radians).
pub fn rotation_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    *Rotation3::new(*omega).matrix()
}

/// Geodesic angle (radians) between two rotations, stable near zero.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let d = a * b.transpose();
    let sin_vec = Vector3::new(d[(2, 1)] - d[(1, 2)], d[(0, 2)] - d[(2, 0)], d[(1, 0)] - d[(0, 1)]) * 0.5;
    let cos = (d.trace() - 1.0) * 0.5;
    sin_vec.norm().atan2(cos)
}

/// Angle (radians) between two directions.
pub fn angle_between_vectors(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Z-Y-X Euler angles in degrees: `R = Rz(phi) · Ry(theta) · Rx(psi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerAngles {
    pub psi: f64,
    pub theta: f64,
    pub phi: f64,
}

impl EulerAngles {
    pub fn new(psi: f64, theta: f64, phi: f64) -> Self {
        Self { psi, theta, phi }
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.psi, self.theta, self.phi]
    }
}

/// Result of decomposing a rotation into Euler angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerDecomposition {
    pub angles: EulerAngles,
    /// `|theta| = 90°`; `psi` was pinned to zero.
    pub gimbal_lock: bool,
}

pub fn rotation_from_euler(a: &EulerAngles) -> Matrix3<f64> {
    let (sx, cx) = a.psi.to_radians().sin_cos();
    let (sy, cy) = a.theta.to_radians().sin_cos();
    let (sz, cz) = a.phi.to_radians().sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cx, -sx, 0.0, sx, cx);
    let ry = Matrix3::new(cy, 0.0, sy, 0.0, 1.0, 0.0, -sy, 0.0, cy);
    let rz = Matrix3::new(cz, -sz, 0.0, sz, cz, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

pub fn euler_from_rotation(r: &Matrix3<f64>) -> EulerDecomposition {
    let s = (-r[(2, 0)]).clamp(-1.0, 1.0);
    // asin loses accuracy near ±1, so theta comes from atan2 of the column norms.
    let c = (r[(2, 1)].powi(2) + r[(2, 2)].powi(2)).sqrt();
    let theta = s.atan2(c).to_degrees();
    if (theta.abs() - 90.0).abs() < 1e-9 {
        let phi = (-r[(0, 1)]).atan2(r[(1, 1)]).to_degrees();
        return EulerDecomposition {
            angles: EulerAngles::new(0.0, theta.signum() * 90.0, phi),
            gimbal_lock: true,
        };
    }
    let psi = r[(2, 1)].atan2(r[(2, 2)]).to_degrees();
    let phi = r[(1, 0)].atan2(r[(0, 0)]).to_degrees();
    EulerDecomposition {
        angles: EulerAngles::new(psi, theta, phi),
        gimbal_lock: false,
    }
}

/// Radial distortion `p · (1 + κ1 r² + κ2 r⁴ + κ3 r⁶)` on normalized coordinates.
pub fn distort(p: &NormalizedPoint, kappa: &[f64; 3]) -> NormalizedPoint {
    p * distortion_factor(p.norm_squared(), kappa)
}

#[inline]
pub(crate) fn distortion_factor(r2: f64, kappa: &[f64; 3]) -> f64 {
    1.0 + r2 * (kappa[0] + r2 * (kappa[1] + r2 * kappa[2]))
}

/// Inverse of [`distort`] by fixed-point iteration.
pub fn undistort(p_d: &NormalizedPoint, kappa: &[f64; 3]) -> Result<NormalizedPoint, GeometryError> {
    let mut p = *p_d;
    for _ in 0..UNDISTORT_MAX_ITERS {
        let next = p_d / distortion_factor(p.norm_squared(), kappa);
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let step = (next - p).norm();
        p = next;
        if step < UNDISTORT_STEP_TOL {
            return Ok(p);
        }
    }
    Err(GeometryError::NonConvergent {
        x: p_d.x,
        y: p_d.y,
    })
}

/// Pinhole intrinsics (zero skew) plus three radial distortion coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub kappa: [f64; 3],
    pub width: u32,
    pub height: u32,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, kappa: [f64; 3], width: u32, height: u32) -> Result<Self, GeometryError> {
        let cam = Self { fx, fy, cx, cy, kappa, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .chain(self.kappa.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(GeometryError::NonFinite);
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidCamera("focal lengths must be positive".into()));
        }
        if self.cx < 0.0 || self.cy < 0.0 || self.cx > self.width as f64 || self.cy > self.height as f64 {
            return Err(GeometryError::InvalidCamera("principal point outside the sensor".into()));
        }
        Ok(())
    }

    /// Intrinsic matrix `K` with zero skew.
    pub fn k(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn has_distortion(&self) -> bool {
        self.kappa.iter().any(|&k| k != 0.0)
    }

    pub fn contains(&self, px: &PixelPoint) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.width as f64 && px.y <= self.height as f64
    }

    pub fn normalized_to_pixel(&self, p: &NormalizedPoint) -> PixelPoint {
        PixelPoint::new(self.fx * p.x + self.cx, self.fy * p.y + self.cy)
    }

    pub fn pixel_to_normalized(&self, px: &PixelPoint) -> NormalizedPoint {
        NormalizedPoint::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    /// Raw pixel to undistorted normalized coordinates.
    pub fn undistort_pixel_normalized(&self, px: &PixelPoint) -> Result<NormalizedPoint, GeometryError> {
        undistort(&self.pixel_to_normalized(px), &self.kappa)
    }

    /// Raw pixel to the pixel the same ray would hit through a distortion-free lens.
    pub fn undistort_pixel(&self, px: &PixelPoint) -> Result<PixelPoint, GeometryError> {
        Ok(self.normalized_to_pixel(&self.undistort_pixel_normalized(px)?))
    }

    /// Same camera with the distortion coefficients zeroed.
    pub fn without_distortion(&self) -> Self {
        Self { kappa: [0.0; 3], ..*self }
    }
}

/// Projects a world point through `pose` and `cam`: `K · distort(π(R X + t))`.
pub fn project(cam: &CameraModel, pose: &RigidTransform, x: &Vector3<f64>) -> Result<PixelPoint, GeometryError> {
    let pc = pose.transform_point(x);
    if pc.z <= 1e-12 {
        return Err(GeometryError::BehindCamera { depth: pc.z });
    }
    let n = NormalizedPoint::new(pc.x / pc.z, pc.y / pc.z);
    Ok(cam.normalized_to_pixel(&distort(&n, &cam.kappa)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut ChaCha8Rng) -> RigidTransform {
        let omega = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let t = Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        RigidTransform { rotation: rotation_exp(&omega), translation: t }
    }

    fn desk_camera() -> CameraModel {
        CameraModel::new(1000.0, 1000.0, 812.0, 617.0, [0.0; 3], 1624, 1234).unwrap()
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let e = random_transform(&mut rng);
        let c = compose(&RigidTransform::identity(), &e);
        assert_relative_eq!(c.rotation, e.rotation, epsilon = 1e-15);
        assert_relative_eq!(c.translation, e.translation, epsilon = 1e-15);
        let id = compose(&e, &invert(&e));
        assert!((id.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn chained_transfer_matches_two_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let ba = random_transform(&mut rng);
            let cb = random_transform(&mut rng);
            let x = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let direct = cb.transform_point(&ba.transform_point(&x));
            let chained = compose(&cb, &ba).transform_point(&x);
            assert!((direct - chained).norm() < 1e-12);
        }
    }

    #[test]
    fn compose_repairs_drift() {
        let mut r = rotation_exp(&Vector3::new(0.3, -0.2, 0.1));
        r[(0, 0)] += 1e-9;
        let drifted = RigidTransform { rotation: r, translation: Vector3::zeros() };
        let out = compose(&drifted, &RigidTransform::identity());
        assert!(orthonormality_error(&out.rotation) < 1e-12);
        assert!((out.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invert_examples() {
        let id = invert(&RigidTransform::identity());
        assert_eq!(id, RigidTransform::identity());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let e = random_transform(&mut rng);
        let back = invert(&invert(&e));
        assert!((back.rotation - e.rotation).norm() < 1e-12);
        assert!((back.translation - e.translation).norm() < 1e-12);

        let rx90 = rotation_from_euler(&EulerAngles::new(90.0, 0.0, 0.0));
        let e = RigidTransform::new(rx90, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let inv = invert(&e);
        for _ in 0..10 {
            let p = Vector3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            assert!((inv.transform_point(&e.transform_point(&p)) - p).norm() < 1e-12);
        }
    }

    #[test]
    fn camera_center_examples() {
        assert_eq!(camera_center(&RigidTransform::identity()), Vector3::zeros());
        let e = RigidTransform::new(Matrix3::identity(), Vector3::new(0.0, 0.0, -5.0)).unwrap();
        assert_eq!(camera_center(&e), Vector3::new(0.0, 0.0, 5.0));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let e = random_transform(&mut rng);
            let c = camera_center(&e);
            // R C + t = 0 is the zero homogeneous depth of the optical center.
            assert!(e.transform_point(&c).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_rotation() {
        let m = Matrix3::new(1.0, 0.1, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(m, Vector3::zeros()).is_err());
        let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(RigidTransform::new(reflect, Vector3::zeros()).is_err());
    }

    #[test]
    fn euler_examples() {
        assert_relative_eq!(rotation_from_euler(&EulerAngles::new(0.0, 0.0, 0.0)), Matrix3::identity());
        let r = rotation_from_euler(&EulerAngles::new(90.0, 0.0, 0.0));
        assert_relative_eq!(r * Vector3::new(0.0, 1.0, 0.0), Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn euler_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let a = EulerAngles::new(
                rng.random_range(-179.0..179.0),
                rng.random_range(-89.0..89.0),
                rng.random_range(-179.0..179.0),
            );
            let d = euler_from_rotation(&rotation_from_euler(&a));
            assert!(!d.gimbal_lock);
            assert!((d.angles.psi - a.psi).abs() < 1e-10);
            assert!((d.angles.theta - a.theta).abs() < 1e-10);
            assert!((d.angles.phi - a.phi).abs() < 1e-10);
        }
    }

    #[test]
    fn euler_gimbal_lock_flagged() {
        for theta in [90.0, -90.0] {
            let r = rotation_from_euler(&EulerAngles::new(20.0, theta, 35.0));
            let d = euler_from_rotation(&r);
            assert!(d.gimbal_lock);
            assert_eq!(d.angles.psi, 0.0);
            assert!((rotation_from_euler(&d.angles) - r).norm() < 1e-9);
        }
    }

    #[test]
    fn distort_examples() {
        let k = [0.1, 0.0, 0.0];
        assert_eq!(distort(&NormalizedPoint::zeros(), &[0.3, 0.2, 0.1]), NormalizedPoint::zeros());
        let d = distort(&NormalizedPoint::new(0.1, 0.0), &k);
        assert_relative_eq!(d.x, 0.1001, epsilon = 1e-15);
        assert_eq!(d.y, 0.0);
        let p = NormalizedPoint::new(0.3, -0.7);
        assert_eq!(distort(&p, &[0.0; 3]), p);
    }

    #[test]
    fn undistort_round_trip() {
        let k = [0.1, -0.05, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let r = rng.random_range(0.0..0.5);
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            let p = NormalizedPoint::new(r * a.cos(), r * a.sin());
            let back = undistort(&distort(&p, &k), &k).unwrap();
            assert!((back - p).norm() < 1e-10);
        }
        assert_eq!(undistort(&NormalizedPoint::zeros(), &k).unwrap(), NormalizedPoint::zeros());
        let p = NormalizedPoint::new(0.4, 0.2);
        assert_eq!(undistort(&p, &[0.0; 3]).unwrap(), p);
    }

    #[test]
    fn undistort_reports_non_convergence() {
        // Far outside the monotonic range of a strongly barrel-distorting polynomial.
        let err = undistort(&NormalizedPoint::new(3.0, 0.0), &[-0.5, 0.0, 0.0]).unwrap_err();
        assert!(matches!(err, GeometryError::NonConvergent { .. }));
    }

    #[test]
    fn project_examples() {
        let cam = desk_camera();
        let id = RigidTransform::identity();
        assert_eq!(project(&cam, &id, &Vector3::new(0.0, 0.0, 5.0)).unwrap(), PixelPoint::new(812.0, 617.0));
        let p = project(&cam, &id, &Vector3::new(0.5, 0.0, 5.0)).unwrap();
        assert_relative_eq!(p, PixelPoint::new(912.0, 617.0), epsilon = 1e-12);
        let cam_d = CameraModel { kappa: [0.1, 0.0, 0.0], ..cam };
        let p = project(&cam_d, &id, &Vector3::new(0.5, 0.0, 5.0)).unwrap();
        assert_relative_eq!(p, PixelPoint::new(912.1, 617.0), epsilon = 1e-9);
        assert!(matches!(
            project(&cam, &id, &Vector3::new(0.0, 0.0, -1.0)),
            Err(GeometryError::BehindCamera { .. })
        ));
    }

    #[test]
    fn camera_validation() {
        assert!(CameraModel::new(0.0, 1000.0, 812.0, 617.0, [0.0; 3], 1624, 1234).is_err());
        assert!(CameraModel::new(1000.0, 1000.0, 2000.0, 617.0, [0.0; 3], 1624, 1234).is_err());
    }

    proptest! {
        #[test]
        fn compose_is_associative(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let c = random_transform(&mut rng);
            let left = compose(&compose(&a, &b), &c);
            let right = compose(&a, &compose(&b, &c));
            prop_assert!((left.rotation - right.rotation).norm() < 1e-12);
            prop_assert!((left.translation - right.translation).norm() < 1e-12);
        }

        #[test]
        fn project_unproject_identity(seed in any::<u64>(), u in 1.0f64..1623.0, v in 1.0f64..1233.0, depth in 0.5f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pose = random_transform(&mut rng);
            let cam = desk_camera();
            let ray = cam.k_inverse() * nalgebra::Vector3::new(u, v, 1.0);
            let x_cam = ray * depth;
            let x_world = invert(&pose).transform_point(&x_cam);
            let px = project(&cam, &pose, &x_world).unwrap();
            prop_assert!((px - PixelPoint::new(u, v)).norm() < 1e-10);
        }

        #[test]
        fn center_satisfies_rc_plus_t(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let e = random_transform(&mut rng);
            let c = camera_center(&e);
            prop_assert!((e.rotation * c + e.translation).norm() < 1e-12);
        }
    }
}
