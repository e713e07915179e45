//! Fundamental matrix estimation (normalized 8-point + RANSAC) and relative pose recovery.
//!
//! All correspondences here are expected in undistorted pixel coordinates.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::EpipolarError;
use crate::geometry::{skew, CameraModel, PixelPoint, RigidTransform};
use crate::matching::Correspondence;
use crate::triangulation::{triangulate_normalized, TriangulatedPoint};

const MIN_POINTS: usize = 8;

/// A rank-2 fundamental matrix, stored with unit Frobenius norm and its
/// largest-magnitude entry positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    /// Normalizes scale and sign of an arbitrary 3x3 matrix. Rank is not touched.
    pub fn from_matrix(m: Matrix3<f64>) -> Self {
        let norm = m.norm();
        let mut f = if norm > 0.0 { m / norm } else { m };
        let mut largest = 0.0f64;
        let mut sign = 1.0;
        for r in 0..3 {
            for c in 0..3 {
                if f[(r, c)].abs() > largest {
                    largest = f[(r, c)].abs();
                    sign = f[(r, c)].signum();
                }
            }
        }
        if sign < 0.0 {
            f = -f;
        }
        Self(f)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Self {
        Self::from_matrix(self.0.transpose())
    }

    /// Frobenius distance that ignores the overall sign.
    pub fn distance(&self, other: &Self) -> f64 {
        (self.0 - other.0).norm().min((self.0 + other.0).norm())
    }
}

/// Essential matrix with singular values forced to `(1, 1, 0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    pub fn from_fundamental(f: &FundamentalMatrix, k1: &Matrix3<f64>, k2: &Matrix3<f64>) -> Self {
        let e = k2.transpose() * f.matrix() * k1;
        let svd = e.svd(true, true);
        let u = svd.u.expect("svd u");
        let v_t = svd.v_t.expect("svd v_t");
        Self(u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0)) * v_t)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// The four `(R, t)` factorizations in the fixed order `(R1, t), (R1, -t), (R2, t), (R2, -t)`.
    pub fn candidates(&self) -> [(Matrix3<f64>, Vector3<f64>); 4] {
        let svd = self.0.svd(true, true);
        let mut u = svd.u.expect("svd u");
        let mut v_t = svd.v_t.expect("svd v_t");
        if u.determinant() < 0.0 {
            u = -u;
        }
        if v_t.determinant() < 0.0 {
            v_t = -v_t;
        }
        let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let r1 = u * w * v_t;
        let r2 = u * w.transpose() * v_t;
        let t: Vector3<f64> = u.column(2).into_owned().normalize();
        [(r1, t), (r1, -t), (r2, t), (r2, -t)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold in pixels; a correspondence is an inlier when its Sampson distance is below `threshold²`.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 1.0,
            confidence: 0.999,
            max_iterations: 10_000,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<(), EpipolarError> {
        if !(self.threshold > 0.0) {
            return Err(EpipolarError::InvalidConfig(format!("threshold {} must be positive", self.threshold)));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(EpipolarError::InvalidConfig(format!("confidence {} outside (0, 1)", self.confidence)));
        }
        if self.max_iterations == 0 {
            return Err(EpipolarError::InvalidConfig("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Output of [`ransac_fundamental`].
#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult {
    pub fundamental: FundamentalMatrix,
    pub inliers: Vec<bool>,
    pub iterations: usize,
}

impl RansacResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }

    pub fn inlier_indices(&self) -> Vec<usize> {
        self.inliers.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }
}

/// A chirality-selected relative pose from camera 1 to camera 2 with unit translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseHypothesis {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    /// Number of correspondences in front of both cameras, per candidate.
    pub front_counts: [usize; 4],
    pub chosen: usize,
}

impl PoseHypothesis {
    pub fn transform(&self) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation,
            translation: self.translation,
        }
    }
}

/// Translates the centroid to the origin and scales to a mean distance of √2.
pub fn normalize_points(points: &[PixelPoint]) -> Result<(Vec<PixelPoint>, Matrix3<f64>), EpipolarError> {
    if points.len() < 2 {
        return Err(EpipolarError::TooFewPoints { got: points.len(), need: 2 });
    }
    let n = points.len() as f64;
    let centroid = points.iter().fold(PixelPoint::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-12 * (1.0 + centroid.norm())) {
        return Err(EpipolarError::Degenerate);
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    let t = Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0);
    let out = points.iter().map(|p| (p - centroid) * s).collect();
    Ok((out, t))
}

/// Normalized 8-point algorithm with rank-2 enforcement.
pub fn eight_point(corrs: &[Correspondence]) -> Result<FundamentalMatrix, EpipolarError> {
    if corrs.len() < MIN_POINTS {
        return Err(EpipolarError::TooFewPoints { got: corrs.len(), need: MIN_POINTS });
    }
    let p1: Vec<PixelPoint> = corrs.iter().map(|c| c.x1).collect();
    let p2: Vec<PixelPoint> = corrs.iter().map(|c| c.x2).collect();
    let (n1, t1) = normalize_points(&p1)?;
    let (n2, t2) = normalize_points(&p2)?;

    // Pad with zero rows so the SVD always exposes the full 9-dimensional right basis.
    let rows = corrs.len().max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (x1, x2)) in n1.iter().zip(&n2).enumerate() {
        let row = [
            x2.x * x1.x,
            x2.x * x1.y,
            x2.x,
            x2.y * x1.x,
            x2.y * x1.y,
            x2.y,
            x1.x,
            x1.y,
            1.0,
        ];
        for (j, v) in row.iter().enumerate() {
            a[(i, j)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("svd v_t");
    let sv = &svd.singular_values;
    let (min_idx, _) = sv.argmin();
    let mut sorted: Vec<f64> = sv.iter().copied().collect();
    sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
    if sorted[7] < 1e-10 * sorted[0] {
        return Err(EpipolarError::Degenerate);
    }
    let f = v_t.row(min_idx);
    let fn_ = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);

    let f_rank2 = enforce_rank_two(&fn_);
    Ok(FundamentalMatrix::from_matrix(t2.transpose() * f_rank2 * t1))
}

fn enforce_rank_two(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let mut s = svd.singular_values;
    let (min_idx, _) = s.argmin();
    s[min_idx] = 0.0;
    svd.u.expect("svd u") * Matrix3::from_diagonal(&s) * svd.v_t.expect("svd v_t")
}

/// `F = K2⁻ᵀ [t]× R K1⁻¹` for a relative pose mapping camera-1 coordinates to camera-2 coordinates.
pub fn fundamental_from_calibration(
    k1: &Matrix3<f64>,
    k2: &Matrix3<f64>,
    rel: &RigidTransform,
) -> Result<FundamentalMatrix, EpipolarError> {
    if rel.translation.norm() < 1e-12 {
        return Err(EpipolarError::ZeroBaseline);
    }
    let k1_inv = k1.try_inverse().ok_or(EpipolarError::Degenerate)?;
    let k2_inv = k2.try_inverse().ok_or(EpipolarError::Degenerate)?;
    Ok(FundamentalMatrix::from_matrix(
        k2_inv.transpose() * skew(&rel.translation) * rel.rotation * k1_inv,
    ))
}

/// First-order geometric error of a correspondence with respect to `F` (squared pixels).
pub fn sampson_distance(f: &FundamentalMatrix, c: &Correspondence) -> f64 {
    let f = f.matrix();
    let x1 = Vector3::new(c.x1.x, c.x1.y, 1.0);
    let x2 = Vector3::new(c.x2.x, c.x2.y, 1.0);
    let fx1 = f * x1;
    let ftx2 = f.transpose() * x2;
    let num = x2.dot(&fx1);
    let den = fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y;
    if den == 0.0 {
        return f64::INFINITY;
    }
    num * num / den
}

fn inlier_mask(f: &FundamentalMatrix, corrs: &[Correspondence], threshold_sq: f64) -> Vec<bool> {
    corrs.iter().map(|c| sampson_distance(f, c) < threshold_sq).collect()
}

fn required_iterations(inliers: usize, total: usize, confidence: f64, cap: usize) -> usize {
    let w = inliers as f64 / total as f64;
    let p_good = w.powi(MIN_POINTS as i32);
    if p_good >= 1.0 {
        return 1;
    }
    if p_good <= 0.0 {
        return cap;
    }
    let n = (1.0 - confidence).ln() / (1.0 - p_good).ln();
    if n.is_finite() {
        (n.ceil() as usize).clamp(1, cap)
    } else {
        cap
    }
}

/// Seeded RANSAC over minimal 8-point samples, followed by a refit on the consensus set.
pub fn ransac_fundamental(corrs: &[Correspondence], cfg: &RansacConfig) -> Result<RansacResult, EpipolarError> {
    cfg.validate()?;
    if corrs.len() < MIN_POINTS {
        return Err(EpipolarError::TooFewPoints { got: corrs.len(), need: MIN_POINTS });
    }
    let threshold_sq = cfg.threshold * cfg.threshold;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best: Option<(usize, FundamentalMatrix)> = None;
    let mut bound = cfg.max_iterations;
    let mut iteration = 0;
    let mut sample_buf = Vec::with_capacity(MIN_POINTS);
    while iteration < bound {
        iteration += 1;
        sample_buf.clear();
        sample_buf.extend(sample(&mut rng, corrs.len(), MIN_POINTS).into_iter().map(|i| corrs[i]));
        let Ok(f) = eight_point(&sample_buf) else {
            continue;
        };
        let count = corrs.iter().filter(|c| sampson_distance(&f, c) < threshold_sq).count();
        if best.as_ref().is_none_or(|(b, _)| count > *b) {
            best = Some((count, f));
            bound = required_iterations(count, corrs.len(), cfg.confidence, cfg.max_iterations).max(iteration);
        }
    }
    let (best_count, best_f) = best.ok_or(EpipolarError::NoConsensus { best: 0 })?;
    if best_count < MIN_POINTS {
        return Err(EpipolarError::NoConsensus { best: best_count });
    }

    // Refit on the consensus set until the mask settles.
    let mut mask = inlier_mask(&best_f, corrs, threshold_sq);
    let mut f = best_f;
    for _ in 0..10 {
        let inliers: Vec<Correspondence> = corrs.iter().zip(&mask).filter(|(_, &m)| m).map(|(c, _)| *c).collect();
        let Ok(refit) = eight_point(&inliers) else {
            break;
        };
        let new_mask = inlier_mask(&refit, corrs, threshold_sq);
        let new_count = new_mask.iter().filter(|&&b| b).count();
        if new_count < MIN_POINTS || new_count < mask.iter().filter(|&&b| b).count() {
            break;
        }
        let settled = new_mask == mask;
        f = refit;
        mask = new_mask;
        if settled {
            break;
        }
    }
    Ok(RansacResult {
        fundamental: f,
        inliers: mask,
        iterations: iteration,
    })
}

/// Decomposes `E = K2ᵀ F K1` and keeps the candidate placing the most correspondences
/// in front of both cameras.
pub fn recover_pose(
    f: &FundamentalMatrix,
    k1: &Matrix3<f64>,
    k2: &Matrix3<f64>,
    corrs: &[Correspondence],
) -> Result<PoseHypothesis, EpipolarError> {
    if corrs.is_empty() {
        return Err(EpipolarError::TooFewPoints { got: 0, need: 1 });
    }
    let k1_inv = k1.try_inverse().ok_or(EpipolarError::Degenerate)?;
    let k2_inv = k2.try_inverse().ok_or(EpipolarError::Degenerate)?;
    let normalized: Vec<(Vector3<f64>, Vector3<f64>)> = corrs
        .iter()
        .map(|c| (k1_inv * Vector3::new(c.x1.x, c.x1.y, 1.0), k2_inv * Vector3::new(c.x2.x, c.x2.y, 1.0)))
        .collect();
    let e = EssentialMatrix::from_fundamental(f, k1, k2);
    let candidates = e.candidates();
    let mut counts = [0usize; 4];
    for (count, (r, t)) in counts.iter_mut().zip(&candidates) {
        let pose = RigidTransform { rotation: *r, translation: *t };
        *count = normalized
            .iter()
            .filter(|(a, b)| {
                matches!(
                    triangulate_normalized(&RigidTransform::identity(), &pose, &(a.xy() / a.z), &(b.xy() / b.z)),
                    Ok(TriangulatedPoint { depth1, depth2, .. }) if depth1 > 0.0 && depth2 > 0.0
                )
            })
            .count();
    }
    let max = *counts.iter().max().expect("four candidates");
    let chosen = counts.iter().position(|&c| c == max).expect("max exists");
    if max == 0 || counts.iter().filter(|&&c| c == max).count() > 1 {
        return Err(EpipolarError::ChiralityAmbiguous { counts });
    }
    let (rotation, translation) = candidates[chosen];
    Ok(PoseHypothesis {
        rotation,
        translation,
        front_counts: counts,
        chosen,
    })
}

/// Epipolar line `(a, b, c)` in image 2, normalized so `a² + b² = 1`.
pub fn epipolar_line(f: &FundamentalMatrix, x1: &PixelPoint) -> Result<Vector3<f64>, EpipolarError> {
    let x = Vector3::new(x1.x, x1.y, 1.0);
    let l = f.matrix() * x;
    let n = (l.x * l.x + l.y * l.y).sqrt();
    if n < 1e-12 * f.matrix().norm() * x.norm() {
        return Err(EpipolarError::DegenerateLine);
    }
    Ok(l / n)
}

/// Signed distance of a point to a normalized line.
pub fn point_line_distance(line: &Vector3<f64>, p: &PixelPoint) -> f64 {
    line.x * p.x + line.y * p.y + line.z
}

/// Undistorts raw pixel correspondences so the pinhole epipolar relations apply.
pub fn undistort_correspondences(
    cam1: &CameraModel,
    cam2: &CameraModel,
    corrs: &[Correspondence],
) -> Result<Vec<Correspondence>, EpipolarError> {
    corrs
        .iter()
        .map(|c| Ok(Correspondence::new(cam1.undistort_pixel(&c.x1)?, cam2.undistort_pixel(&c.x2)?)))
        .collect()
}
