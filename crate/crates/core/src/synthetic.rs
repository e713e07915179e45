//! Ground-truth rig networks with rendered correspondences, and scoring of
//! recovered calibrations against the truth.
//!
//! Rigs sit on an arc around a scene center and look at it. Rig 1's wide camera
//! is the reference frame of every pose and point in [`GroundTruth`].

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::epipolar::{fundamental_from_calibration, sampson_distance};
use crate::error::SyntheticError;
use crate::geometry::{
    angle_between_vectors, camera_center, compose, invert, project, rotation_angle_between, rotation_exp, CameraModel, PixelPoint,
    RigidTransform,
};
use crate::matching::Correspondence;
use crate::rig_network::{analysis_global_pose, CalibrationResult, HybridRig, RigId, RigNetwork, ScaleConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Rig k is adjacent to rig k+1.
    #[default]
    Chain,
    /// Chain plus an edge closing the loop between the first and last rig.
    Ring,
}

/// How each pair receives its metric anchor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleSource {
    /// The true distance between the two wide-camera centers.
    MeasuredBaseline,
    /// A bar of the given length planted at the scene center; its endpoints are
    /// the first two correspondences of every wide pair.
    KnownObject { length_mm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub rig_count: usize,
    pub topology: Topology,
    pub wide_camera: CameraModel,
    pub analysis_camera: CameraModel,
    /// Analysis camera center along the wide camera's x axis.
    pub in_rig_baseline_mm: f64,
    /// Rotation of the analysis camera about the wide camera's y axis.
    pub analysis_toe_in_deg: f64,
    /// Distance between the wide-camera centers of consecutive rigs.
    pub inter_rig_baseline_mm: f64,
    /// Radius of the arc the rigs sit on, measured from the scene center.
    pub scene_distance_mm: f64,
    /// Maximum random deviation of each rig's viewing direction.
    pub look_at_jitter_deg: f64,
    /// Wide-camera correspondences per adjacent pair.
    pub point_count: usize,
    /// Half side of the cube wide-pair points are drawn from.
    pub point_extent_mm: f64,
    /// Analysis-camera correspondences per adjacent pair.
    pub analysis_point_count: usize,
    /// Half side of the cube analysis points are drawn from.
    pub analysis_extent_mm: f64,
    pub noise_sigma_px: f64,
    /// Noise on analysis images; `noise_sigma_px` when absent.
    pub analysis_noise_sigma_px: Option<f64>,
    /// Fraction of wide correspondences whose second pixel is replaced by a random one.
    pub outlier_fraction: f64,
    /// Smallest Sampson distance (px) of a planted outlier from the true epipolar geometry.
    pub outlier_margin_px: f64,
    pub scale_source: ScaleSource,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl SceneConfig {
    /// The reference two-rig desk scene.
    pub fn desk() -> Self {
        Self {
            rig_count: 2,
            topology: Topology::Chain,
            wide_camera: CameraModel {
                fx: 900.0,
                fy: 900.0,
                cx: 812.0,
                cy: 617.0,
                kappa: [-0.04, 0.008, 0.0],
                width: 1624,
                height: 1234,
            },
            analysis_camera: CameraModel {
                fx: 2700.0,
                fy: 2700.0,
                cx: 812.0,
                cy: 617.0,
                kappa: [0.02, 0.0, 0.0],
                width: 1624,
                height: 1234,
            },
            in_rig_baseline_mm: 60.0,
            analysis_toe_in_deg: 1.0,
            inter_rig_baseline_mm: 2000.0,
            scene_distance_mm: 3000.0,
            look_at_jitter_deg: 3.0,
            point_count: 200,
            point_extent_mm: 1500.0,
            analysis_point_count: 40,
            analysis_extent_mm: 200.0,
            noise_sigma_px: 0.0,
            analysis_noise_sigma_px: None,
            outlier_fraction: 0.0,
            outlier_margin_px: 5.0,
            scale_source: ScaleSource::MeasuredBaseline,
            seed: 0,
        }
    }

    pub fn analysis_sigma(&self) -> f64 {
        self.analysis_noise_sigma_px.unwrap_or(self.noise_sigma_px)
    }

    pub fn validate(&self) -> Result<(), SyntheticError> {
        let fail = |m: &str| Err(SyntheticError::InvalidConfig(m.to_string()));
        self.wide_camera.validate().map_err(|e| SyntheticError::InvalidConfig(format!("wide camera: {e}")))?;
        self.analysis_camera
            .validate()
            .map_err(|e| SyntheticError::InvalidConfig(format!("analysis camera: {e}")))?;
        let finite = [
            self.in_rig_baseline_mm,
            self.analysis_toe_in_deg,
            self.inter_rig_baseline_mm,
            self.scene_distance_mm,
            self.look_at_jitter_deg,
            self.point_extent_mm,
            self.analysis_extent_mm,
            self.noise_sigma_px,
            self.analysis_sigma(),
            self.outlier_fraction,
            self.outlier_margin_px,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return fail("non-finite value");
        }
        if self.rig_count < 2 {
            return fail("at least two rigs are required");
        }
        if self.topology == Topology::Ring && self.rig_count < 3 {
            return fail("a ring needs at least three rigs");
        }
        if self.noise_sigma_px < 0.0 || self.analysis_sigma() < 0.0 {
            return fail("noise sigma must be non-negative");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return fail("outlier fraction must lie in [0, 1)");
        }
        if self.point_count < 8 {
            return fail("point_count must be at least 8");
        }
        if self.inter_rig_baseline_mm <= 0.0 || self.inter_rig_baseline_mm >= 2.0 * self.scene_distance_mm {
            return fail("inter-rig baseline must be positive and shorter than the arc diameter");
        }
        if self.scene_distance_mm <= 0.0 || self.point_extent_mm <= 0.0 || self.analysis_extent_mm <= 0.0 {
            return fail("distances and extents must be positive");
        }
        if self.outlier_margin_px < 0.0 || self.look_at_jitter_deg < 0.0 {
            return fail("margins and jitter must be non-negative");
        }
        if let ScaleSource::KnownObject { length_mm } = self.scale_source {
            if !(length_mm > 0.0) {
                return fail("known object length must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairTruth {
    pub pair: (RigId, RigId),
    /// Points behind the wide correspondences, in the reference frame.
    pub wide_points: Vec<Vector3<f64>>,
    /// `false` for planted outliers.
    pub inliers: Vec<bool>,
    pub analysis_points: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub root: RigId,
    /// Reference frame to each rig's wide camera; translations in mm.
    pub wide_poses: BTreeMap<RigId, RigidTransform>,
    pub rig_extrinsics: BTreeMap<RigId, RigidTransform>,
    pub pairs: Vec<PairTruth>,
}

impl GroundTruth {
    /// Reference frame to the analysis camera of rig `id`.
    pub fn analysis_pose(&self, id: RigId) -> Option<RigidTransform> {
        Some(compose(self.rig_extrinsics.get(&id)?, self.wide_poses.get(&id)?))
    }

    /// Maps analysis camera `i` coordinates to analysis camera `j` coordinates.
    pub fn analysis_relative_pose(&self, i: RigId, j: RigId) -> Option<RigidTransform> {
        Some(compose(&self.analysis_pose(j)?, &invert(&self.analysis_pose(i)?)))
    }

    /// Maps wide camera `i` coordinates to wide camera `j` coordinates.
    pub fn wide_relative_pose(&self, i: RigId, j: RigId) -> Option<RigidTransform> {
        Some(compose(self.wide_poses.get(&j)?, &invert(self.wide_poses.get(&i)?)))
    }
}

/// Rendered observations of one adjacent pair; `x1` lies in rig `pair.0`'s image.
#[derive(Debug, Clone, PartialEq)]
pub struct PairObservations {
    pub pair: (RigId, RigId),
    pub wide: Vec<Correspondence>,
    /// Held-out analysis-camera correspondences for validation.
    pub analysis: Vec<Correspondence>,
    pub scale: ScaleConstraint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: SceneConfig,
    pub network: RigNetwork,
    pub pairs: Vec<PairObservations>,
    pub truth: GroundTruth,
}

impl Scene {
    pub fn wide_correspondences(&self) -> BTreeMap<(RigId, RigId), Vec<Correspondence>> {
        self.pairs.iter().map(|p| (p.pair, p.wide.clone())).collect()
    }

    pub fn scale_constraints(&self) -> BTreeMap<(RigId, RigId), ScaleConstraint> {
        self.pairs.iter().map(|p| (p.pair, p.scale)).collect()
    }

    pub fn pair(&self, pair: (RigId, RigId)) -> Option<&PairObservations> {
        self.pairs.iter().find(|p| p.pair == pair)
    }
}

fn look_at(center: &Vector3<f64>, target: &Vector3<f64>) -> Matrix3<f64> {
    let z = (target - center).normalize();
    let x = Vector3::y().cross(&z).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Renderer<'a> {
    cam1: &'a CameraModel,
    pose1: RigidTransform,
    cam2: &'a CameraModel,
    pose2: RigidTransform,
    margin: f64,
}

impl Renderer<'_> {
    /// Noiseless pixels of a world point, `Ok(None)` when outside either image.
    fn render(&self, x: &Vector3<f64>) -> Result<Option<(PixelPoint, PixelPoint)>, SyntheticError> {
        let behind = |_| SyntheticError::InfeasibleConfig("a scene point lies behind a camera".into());
        let a = project(self.cam1, &self.pose1, x).map_err(behind)?;
        let b = project(self.cam2, &self.pose2, x).map_err(behind)?;
        let inside = |c: &CameraModel, p: &PixelPoint| {
            p.x >= self.margin
                && p.y >= self.margin
                && p.x <= c.width as f64 - self.margin
                && p.y <= c.height as f64 - self.margin
        };
        Ok((inside(self.cam1, &a) && inside(self.cam2, &b)).then_some((a, b)))
    }

    fn sample_points(
        &self,
        rng: &mut ChaCha8Rng,
        count: usize,
        extent: f64,
        out_points: &mut Vec<Vector3<f64>>,
        out_pixels: &mut Vec<(PixelPoint, PixelPoint)>,
    ) -> Result<(), SyntheticError> {
        let mut attempts = 0usize;
        let mut added = 0;
        while added < count {
            attempts += 1;
            if attempts > 1000 * count.max(1) {
                return Err(SyntheticError::InfeasibleConfig("too few points are visible in both images".into()));
            }
            let x = Vector3::new(
                rng.random_range(-extent..=extent),
                rng.random_range(-extent..=extent),
                rng.random_range(-extent..=extent),
            );
            if let Some(px) = self.render(&x)? {
                out_points.push(x);
                out_pixels.push(px);
                added += 1;
            }
        }
        Ok(())
    }
}

fn add_noise(rng: &mut ChaCha8Rng, p: &PixelPoint, sigma: f64, cam: &CameraModel) -> PixelPoint {
    if sigma == 0.0 {
        return *p;
    }
    let n = Normal::new(0.0, sigma).expect("sigma validated");
    let q = PixelPoint::new(p.x + n.sample(rng), p.y + n.sample(rng));
    PixelPoint::new(q.x.clamp(0.0, cam.width as f64), q.y.clamp(0.0, cam.height as f64))
}

/// Renders a scene. Identical configurations give identical scenes.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene, SyntheticError> {
    cfg.validate()?;
    let n = cfg.rig_count;
    let step = 2.0 * (cfg.inter_rig_baseline_mm / (2.0 * cfg.scene_distance_mm)).asin();
    let mut jitter_rng = stream(cfg.seed, 0);

    // World frame: scene center at the origin, rigs on an arc in the x-z plane.
    let mut world_wide = Vec::with_capacity(n);
    for k in 0..n {
        let alpha = (k as f64 - (n as f64 - 1.0) / 2.0) * step;
        let center = cfg.scene_distance_mm * Vector3::new(alpha.sin(), 0.0, -alpha.cos());
        let mut r = look_at(&center, &Vector3::zeros());
        if cfg.look_at_jitter_deg > 0.0 {
            let axis = random_unit(&mut jitter_rng);
            let angle = jitter_rng.random_range(0.0..=cfg.look_at_jitter_deg).to_radians();
            r = rotation_exp(&(axis * angle)) * r;
        }
        world_wide.push(RigidTransform::from_rotation_center(r, center));
    }
    let extrinsic = RigidTransform::from_rotation_center(
        rotation_exp(&(Vector3::y() * cfg.analysis_toe_in_deg.to_radians())),
        Vector3::new(cfg.in_rig_baseline_mm, 0.0, 0.0),
    );
    let ids: Vec<RigId> = (1..=n as RigId).collect();
    let to_root = world_wide[0];
    let from_root = invert(&to_root);

    let mut adjacency: Vec<(RigId, RigId)> = ids.windows(2).map(|w| (w[0], w[1])).collect();
    if cfg.topology == Topology::Ring {
        adjacency.push((ids[0], ids[n - 1]));
    }

    let rigs: Vec<HybridRig> = ids
        .iter()
        .map(|&id| HybridRig { id, wide: cfg.wide_camera, analysis: cfg.analysis_camera, rig_extrinsic: extrinsic })
        .collect();
    let network = RigNetwork::new(rigs, adjacency.clone())
        .map_err(|e| SyntheticError::InvalidConfig(format!("network: {e}")))?;

    let mut truth = GroundTruth {
        root: ids[0],
        wide_poses: ids.iter().zip(&world_wide).map(|(&id, w)| (id, compose(w, &from_root))).collect(),
        rig_extrinsics: ids.iter().map(|&id| (id, extrinsic)).collect(),
        pairs: Vec::new(),
    };

    let sigma = cfg.noise_sigma_px;
    let sigma_a = cfg.analysis_sigma();
    let mut pairs = Vec::new();
    for (e, &(i, j)) in adjacency.iter().enumerate() {
        let (wi, wj) = (world_wide[(i - 1) as usize], world_wide[(j - 1) as usize]);
        let mut rng = stream(cfg.seed, 1 + 2 * e as u64);
        let wide = Renderer {
            cam1: &cfg.wide_camera,
            pose1: wi,
            cam2: &cfg.wide_camera,
            pose2: wj,
            margin: 1.0 + 5.0 * sigma,
        };
        let mut points = Vec::with_capacity(cfg.point_count);
        let mut pixels = Vec::with_capacity(cfg.point_count);
        let scale = match cfg.scale_source {
            ScaleSource::MeasuredBaseline => ScaleConstraint::MeasuredBaseline {
                distance_mm: (camera_center(&wj) - camera_center(&wi)).norm(),
            },
            ScaleSource::KnownObject { length_mm } => {
                for s in [-0.5, 0.5] {
                    let x = Vector3::new(s * length_mm, 0.0, 0.0);
                    let px = wide
                        .render(&x)?
                        .ok_or_else(|| SyntheticError::InfeasibleConfig("the known object is not visible".into()))?;
                    points.push(x);
                    pixels.push(px);
                }
                ScaleConstraint::KnownObject { correspondence_a: 0, correspondence_b: 1, length_mm }
            }
        };
        let planted = points.len();
        wide.sample_points(&mut rng, cfg.point_count - planted, cfg.point_extent_mm, &mut points, &mut pixels)?;

        let mut corrs: Vec<Correspondence> = pixels
            .iter()
            .map(|(a, b)| {
                let a = add_noise(&mut rng, a, sigma, &cfg.wide_camera);
                let b = add_noise(&mut rng, b, sigma, &cfg.wide_camera);
                Correspondence::new(a, b)
            })
            .collect();

        let mut inliers = vec![true; corrs.len()];
        let outliers = (cfg.outlier_fraction * cfg.point_count as f64).round() as usize;
        let eligible = corrs.len() - planted;
        if outliers > eligible {
            return Err(SyntheticError::InfeasibleConfig("more outliers than replaceable correspondences".into()));
        }
        let rel = compose(&wj, &invert(&wi));
        let f = fundamental_from_calibration(&cfg.wide_camera.k(), &cfg.wide_camera.k(), &rel)
            .map_err(|e| SyntheticError::InfeasibleConfig(e.to_string()))?;
        let cam = &cfg.wide_camera;
        for k in sample(&mut rng, eligible, outliers).into_iter().map(|k| k + planted) {
            let x1 = cam.undistort_pixel(&corrs[k].x1).map_err(|e| SyntheticError::InfeasibleConfig(e.to_string()))?;
            let mut tries = 0;
            loop {
                tries += 1;
                if tries > 10_000 {
                    return Err(SyntheticError::InfeasibleConfig("outlier margin cannot be met".into()));
                }
                let x2 = PixelPoint::new(
                    rng.random_range(0.0..cam.width as f64),
                    rng.random_range(0.0..cam.height as f64),
                );
                let Ok(u2) = cam.undistort_pixel(&x2) else { continue };
                if sampson_distance(&f, &Correspondence::new(x1, u2)) > cfg.outlier_margin_px.powi(2) {
                    corrs[k].x2 = x2;
                    inliers[k] = false;
                    break;
                }
            }
        }

        let mut arng = stream(cfg.seed, 2 + 2 * e as u64);
        let analysis = Renderer {
            cam1: &cfg.analysis_camera,
            pose1: compose(&extrinsic, &wi),
            cam2: &cfg.analysis_camera,
            pose2: compose(&extrinsic, &wj),
            margin: 1.0 + 5.0 * sigma_a,
        };
        let mut apoints = Vec::with_capacity(cfg.analysis_point_count);
        let mut apixels = Vec::with_capacity(cfg.analysis_point_count);
        analysis.sample_points(&mut arng, cfg.analysis_point_count, cfg.analysis_extent_mm, &mut apoints, &mut apixels)?;
        let acorrs = apixels
            .iter()
            .map(|(a, b)| {
                let a = add_noise(&mut arng, a, sigma_a, &cfg.analysis_camera);
                let b = add_noise(&mut arng, b, sigma_a, &cfg.analysis_camera);
                Correspondence::new(a, b)
            })
            .collect();

        truth.pairs.push(PairTruth {
            pair: (i, j),
            wide_points: points.iter().map(|x| to_root.transform_point(x)).collect(),
            inliers,
            analysis_points: apoints.iter().map(|x| to_root.transform_point(x)).collect(),
        });
        pairs.push(PairObservations { pair: (i, j), wide: corrs, analysis: acorrs, scale });
    }

    Ok(Scene { config: *cfg, network, pairs, truth })
}

/// Error of one recovered pose against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PoseError {
    /// Geodesic distance between the rotations.
    pub rotation_deg: f64,
    /// Angle between the translation vectors.
    pub translation_direction_deg: f64,
    /// `|‖t_rec‖ / ‖t_true‖ − 1|`; when the true translation vanishes, `‖t_rec‖` in mm.
    pub scale_error: f64,
}

pub fn pose_error(truth: &RigidTransform, recovered: &RigidTransform) -> PoseError {
    let rotation_deg = rotation_angle_between(&truth.rotation, &recovered.rotation).to_degrees();
    let (nt, nr) = (truth.translation.norm(), recovered.translation.norm());
    let (translation_direction_deg, scale_error) = if nt < 1e-12 {
        (0.0, nr)
    } else if nr < 1e-12 {
        (0.0, 1.0)
    } else {
        (angle_between_vectors(&truth.translation, &recovered.translation).to_degrees(), (nr / nt - 1.0).abs())
    };
    PoseError { rotation_deg, translation_direction_deg, scale_error }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigEvaluation {
    pub id: RigId,
    pub wide: PoseError,
    pub analysis: PoseError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub rigs: Vec<RigEvaluation>,
    pub max_rotation_deg: f64,
    pub max_translation_direction_deg: f64,
    pub max_scale_error: f64,
    pub mean_reprojection_error_px: Option<f64>,
}

/// Recovered poses relative to the reference wide camera.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RecoveredPoses {
    pub wide: BTreeMap<RigId, RigidTransform>,
    pub analysis: BTreeMap<RigId, RigidTransform>,
    pub mean_reprojection_error_px: Option<f64>,
}

impl RecoveredPoses {
    pub fn from_calibration(result: &CalibrationResult, network: &RigNetwork) -> Self {
        let reg = result.final_registration();
        let analysis = reg
            .poses
            .keys()
            .filter_map(|&id| analysis_global_pose(id, reg, network).ok().map(|p| (id, p)))
            .collect();
        let errors: Vec<f64> = result.pairs.iter().filter_map(|p| p.refined.mean_reprojection_error().ok()).collect();
        Self {
            wide: reg.poses.clone(),
            analysis,
            mean_reprojection_error_px: (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64),
        }
    }
}

/// Scores every rig's wide and analysis pose.
pub fn evaluate(truth: &GroundTruth, recovered: &RecoveredPoses) -> Result<EvaluationReport, SyntheticError> {
    let ids: Vec<RigId> = truth.wide_poses.keys().copied().collect();
    if !ids.iter().eq(recovered.wide.keys()) || !ids.iter().eq(recovered.analysis.keys()) {
        return Err(SyntheticError::RigMismatch);
    }
    let mut rigs = Vec::with_capacity(ids.len());
    for id in ids {
        let ta = truth.analysis_pose(id).ok_or(SyntheticError::RigMismatch)?;
        rigs.push(RigEvaluation {
            id,
            wide: pose_error(&truth.wide_poses[&id], &recovered.wide[&id]),
            analysis: pose_error(&ta, &recovered.analysis[&id]),
        });
    }
    let max = |f: &dyn Fn(&PoseError) -> f64| rigs.iter().flat_map(|r| [f(&r.wide), f(&r.analysis)]).fold(0.0, f64::max);
    Ok(EvaluationReport {
        max_rotation_deg: max(&|e| e.rotation_deg),
        max_translation_direction_deg: max(&|e| e.translation_direction_deg),
        max_scale_error: max(&|e| e.scale_error),
        mean_reprojection_error_px: recovered.mean_reprojection_error_px,
        rigs,
    })
}
