//! Network calibration: pairwise wide-camera estimation, metric scale, refinement,
//! registration in the first rig's frame and transfer to the analysis cameras.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::bundle_adjust::{self, BaCamera, BaProblem, BaReport, ScaleGauge, SolverConfig};
use crate::epipolar::{ransac_fundamental, recover_pose, undistort_correspondences, FundamentalMatrix, RansacConfig};
use crate::error::{EpipolarError, NetworkError};
use crate::geometry::{camera_center, compose, invert, rotation_angle_between, CameraModel, RigidTransform};
use crate::matching::Correspondence;
use crate::triangulation::{triangulate_set, Observation, ProjectionMatrix, TriangulatedSet};

pub type RigId = u32;

/// A wide-FOV registration camera and a long-focal analysis camera on one rigid mount.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridRig {
    pub id: RigId,
    pub wide: CameraModel,
    pub analysis: CameraModel,
    /// Maps wide-camera coordinates to analysis-camera coordinates.
    pub rig_extrinsic: RigidTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigNetwork {
    rigs: Vec<HybridRig>,
    adjacency: Vec<(RigId, RigId)>,
}

impl RigNetwork {
    /// Rigs are kept sorted by id; adjacency pairs are stored as given.
    pub fn new(mut rigs: Vec<HybridRig>, adjacency: Vec<(RigId, RigId)>) -> Result<Self, NetworkError> {
        rigs.sort_by_key(|r| r.id);
        if rigs.is_empty() {
            return Err(NetworkError::InvalidNetwork("no rigs".into()));
        }
        if rigs.windows(2).any(|w| w[0].id == w[1].id) {
            return Err(NetworkError::InvalidNetwork("duplicate rig id".into()));
        }
        for r in &rigs {
            r.wide.validate()?;
            r.analysis.validate()?;
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &adjacency {
            if a == b {
                return Err(NetworkError::InvalidNetwork(format!("self-adjacent rig {a}")));
            }
            for id in [a, b] {
                if !rigs.iter().any(|r| r.id == id) {
                    return Err(NetworkError::UnknownRig(id));
                }
            }
            if !seen.insert((a.min(b), a.max(b))) {
                return Err(NetworkError::InvalidNetwork(format!("pair ({a}, {b}) listed twice")));
            }
        }
        Ok(Self { rigs, adjacency })
    }

    pub fn rigs(&self) -> &[HybridRig] {
        &self.rigs
    }

    pub fn adjacency(&self) -> &[(RigId, RigId)] {
        &self.adjacency
    }

    pub fn rig(&self, id: RigId) -> Result<&HybridRig, NetworkError> {
        self.rigs.iter().find(|r| r.id == id).ok_or(NetworkError::UnknownRig(id))
    }

    /// Lowest rig id; its wide camera is the reference frame.
    pub fn root(&self) -> RigId {
        self.rigs[0].id
    }

    pub fn is_connected(&self) -> bool {
        let mut reached = BTreeSet::from([self.root()]);
        let mut queue = VecDeque::from([self.root()]);
        while let Some(n) = queue.pop_front() {
            for &(a, b) in &self.adjacency {
                let other = if a == n { b } else if b == n { a } else { continue };
                if reached.insert(other) {
                    queue.push_back(other);
                }
            }
        }
        reached.len() == self.rigs.len()
    }
}

/// Metric anchor for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScaleConstraint {
    /// Two correspondences (by index in the pair's correspondence list) whose
    /// 3D points are `length_mm` apart.
    KnownObject {
        correspondence_a: usize,
        correspondence_b: usize,
        length_mm: f64,
    },
    /// Measured distance between the two wide-camera optical centers.
    MeasuredBaseline { distance_mm: f64 },
}

impl ScaleConstraint {
    pub fn validate(&self) -> Result<(), NetworkError> {
        let ok = match *self {
            Self::KnownObject { correspondence_a, correspondence_b, length_mm } => {
                length_mm > 0.0 && length_mm.is_finite() && correspondence_a != correspondence_b
            }
            Self::MeasuredBaseline { distance_mm } => distance_mm > 0.0 && distance_mm.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(NetworkError::InvalidConstraint(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleStatus {
    /// Translation has unit length.
    UnitGauge,
    Metric(ScaleConstraint),
}

/// Relative pose between the two cameras of a pair plus the supporting reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEstimate {
    pub pair: (RigId, RigId),
    pub cameras: (CameraModel, CameraModel),
    /// Maps first-camera coordinates to second-camera coordinates.
    pub pose: RigidTransform,
    /// Points in the first camera's frame, tagged with their correspondence index.
    pub points: TriangulatedSet,
    pub inliers: Vec<bool>,
    /// Raw (distorted) pixel correspondences, indexed as in the input.
    pub correspondences: Vec<Correspondence>,
    pub fundamental: FundamentalMatrix,
    pub scale: ScaleStatus,
}

impl PairEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }

    pub fn is_metric(&self) -> bool {
        matches!(self.scale, ScaleStatus::Metric(_))
    }

    /// Two-camera bundle adjustment problem with the first camera fixed at the origin.
    pub fn to_problem(&self) -> BaProblem {
        let cameras = vec![
            BaCamera { model: self.cameras.0, pose: RigidTransform::identity(), fixed: true },
            BaCamera { model: self.cameras.1, pose: self.pose, fixed: false },
        ];
        let mut observations = Vec::with_capacity(2 * self.points.len());
        for (k, &src) in self.points.sources.iter().enumerate() {
            let c = &self.correspondences[src];
            observations.push(Observation { camera: 0, point: k, pixel: c.x1 });
            observations.push(Observation { camera: 1, point: k, pixel: c.x2 });
        }
        BaProblem {
            cameras,
            points: self.points.points.clone(),
            observations,
            scale_gauge: ScaleGauge::Free,
        }
    }

    pub fn mean_reprojection_error(&self) -> Result<f64, NetworkError> {
        Ok(self.to_problem().mean_reprojection_error()?)
    }

    fn rescaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.pose.translation *= s;
        for p in out.points.points.iter_mut() {
            *p *= s;
        }
        out
    }
}

/// Robust fundamental matrix, chirality-resolved pose and triangulation between two cameras.
pub fn estimate_camera_pair(
    pair: (RigId, RigId),
    cam1: &CameraModel,
    cam2: &CameraModel,
    corrs: &[Correspondence],
    ransac: &RansacConfig,
) -> Result<PairEstimate, NetworkError> {
    if corrs.len() < 8 {
        return Err(EpipolarError::TooFewPoints { got: corrs.len(), need: 8 }.into());
    }
    let undistorted = undistort_correspondences(cam1, cam2, corrs)?;
    let consensus = ransac_fundamental(&undistorted, ransac)?;
    let inlier_idx = consensus.inlier_indices();
    let inliers: Vec<Correspondence> = inlier_idx.iter().map(|&i| undistorted[i]).collect();
    let hypothesis = recover_pose(&consensus.fundamental, &cam1.k(), &cam2.k(), &inliers)?;
    let pose = hypothesis.transform();
    let indexed: Vec<(usize, Correspondence)> = inlier_idx.iter().map(|&i| (i, undistorted[i])).collect();
    let points = triangulate_set(
        &ProjectionMatrix::from_camera(cam1, RigidTransform::identity()),
        &ProjectionMatrix::from_camera(cam2, pose),
        &indexed,
    )?;
    Ok(PairEstimate {
        pair,
        cameras: (*cam1, *cam2),
        pose,
        points,
        inliers: consensus.inliers,
        correspondences: corrs.to_vec(),
        fundamental: consensus.fundamental,
        scale: ScaleStatus::UnitGauge,
    })
}

/// Pose of rig `j`'s wide camera relative to rig `i`'s, in unit-translation gauge.
pub fn estimate_pair_pose(
    rig_i: &HybridRig,
    rig_j: &HybridRig,
    corrs: &[Correspondence],
    ransac: &RansacConfig,
) -> Result<PairEstimate, NetworkError> {
    estimate_camera_pair((rig_i.id, rig_j.id), &rig_i.wide, &rig_j.wide, corrs, ransac)
}

/// Similarity rescaling of the pair so that the constraint holds in millimeters.
pub fn enforce_scale(est: &PairEstimate, constraint: &ScaleConstraint) -> Result<PairEstimate, NetworkError> {
    constraint.validate()?;
    let current = match *constraint {
        ScaleConstraint::KnownObject { correspondence_a, correspondence_b, .. } => {
            let locate = |c: usize| {
                est.points.position_of(c).ok_or_else(|| {
                    NetworkError::InvalidConstraint(format!("correspondence {c} has no triangulated point"))
                })
            };
            let (a, b) = (locate(correspondence_a)?, locate(correspondence_b)?);
            (est.points.points[a] - est.points.points[b]).norm()
        }
        ScaleConstraint::MeasuredBaseline { .. } => camera_center(&est.pose).norm(),
    };
    if current < 1e-9 {
        return Err(NetworkError::DegenerateConstraint(current));
    }
    let target = match *constraint {
        ScaleConstraint::KnownObject { length_mm, .. } => length_mm,
        ScaleConstraint::MeasuredBaseline { distance_mm } => distance_mm,
    };
    let mut out = est.rescaled(target / current);
    out.scale = ScaleStatus::Metric(*constraint);
    Ok(out)
}

/// Two-view bundle adjustment with the first camera fixed; metric scale is re-applied afterwards.
pub fn refine_pair(est: &PairEstimate, cfg: &SolverConfig) -> Result<(PairEstimate, BaReport), NetworkError> {
    let baseline = est.pose.translation.norm();
    if baseline < 1e-12 {
        return Err(NetworkError::DegenerateConstraint(baseline));
    }
    let unit = est.rescaled(1.0 / baseline);
    let mut problem = unit.to_problem();
    problem.scale_gauge = ScaleGauge::FixedBaseline { camera: 1, length: 1.0 };
    let (solved, report) = bundle_adjust::solve(&problem, cfg)?;
    let mut refined = unit.clone();
    refined.pose = solved.cameras[1].pose;
    refined.points.points = solved.points;
    refined.scale = ScaleStatus::UnitGauge;
    if let ScaleStatus::Metric(c) = est.scale {
        refined = enforce_scale(&refined, &c)?;
    }
    Ok((refined, report))
}

/// Closed-loop disagreement on an edge that the spanning tree did not use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CycleDiscrepancy {
    pub pair: (RigId, RigId),
    pub rotation_deg: f64,
    pub translation_mm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub root: RigId,
    /// Maps root wide-camera coordinates to each rig's wide-camera coordinates.
    pub poses: BTreeMap<RigId, RigidTransform>,
    pub tree_edges: Vec<(RigId, RigId)>,
    pub cycles: Vec<CycleDiscrepancy>,
}

impl Registration {
    pub fn pose(&self, id: RigId) -> Result<&RigidTransform, NetworkError> {
        self.poses.get(&id).ok_or(NetworkError::UnknownRig(id))
    }
}

fn edge_discrepancy(est: &PairEstimate, poses: &BTreeMap<RigId, RigidTransform>) -> CycleDiscrepancy {
    let (i, j) = est.pair;
    let predicted = compose(&est.pose, &poses[&i]);
    let d = compose(&poses[&j], &invert(&predicted));
    CycleDiscrepancy {
        pair: est.pair,
        rotation_deg: rotation_angle_between(&poses[&j].rotation, &predicted.rotation).to_degrees(),
        translation_mm: d.translation.norm(),
    }
}

/// Disagreement between each pairwise estimate and the relative pose implied by `poses`.
pub fn edge_discrepancies(estimates: &[PairEstimate], poses: &BTreeMap<RigId, RigidTransform>) -> Vec<CycleDiscrepancy> {
    estimates.iter().map(|e| edge_discrepancy(e, poses)).collect()
}

/// Chains metric pairwise poses along a BFS spanning tree rooted at the lowest rig id.
pub fn register_network(network: &RigNetwork, estimates: &[PairEstimate]) -> Result<Registration, NetworkError> {
    let mut edges: BTreeMap<(RigId, RigId), &PairEstimate> = BTreeMap::new();
    for e in estimates {
        let (i, j) = e.pair;
        network.rig(i)?;
        network.rig(j)?;
        if !e.is_metric() {
            return Err(NetworkError::MixedScale(i, j));
        }
        if edges.insert((i.min(j), i.max(j)), e).is_some() {
            return Err(NetworkError::InvalidNetwork(format!("pair ({i}, {j}) estimated twice")));
        }
    }
    let root = network.root();
    let mut poses = BTreeMap::from([(root, RigidTransform::identity())]);
    let mut tree = BTreeSet::new();
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        let mut neighbors: Vec<(RigId, &PairEstimate)> = edges
            .iter()
            .filter_map(|(&(a, b), e)| if a == n { Some((b, *e)) } else if b == n { Some((a, *e)) } else { None })
            .collect();
        neighbors.sort_by_key(|(id, _)| *id);
        for (m, e) in neighbors {
            if poses.contains_key(&m) {
                continue;
            }
            let from = poses[&n];
            // Edge pose maps pair.0 to pair.1.
            let pose = if e.pair.0 == n { compose(&e.pose, &from) } else { compose(&invert(&e.pose), &from) };
            poses.insert(m, pose);
            tree.insert((n.min(m), n.max(m)));
            queue.push_back(m);
        }
    }
    if poses.len() != network.rigs().len() {
        return Err(NetworkError::DisconnectedNetwork);
    }
    let cycles = edges
        .iter()
        .filter(|(k, _)| !tree.contains(k))
        .map(|(_, e)| edge_discrepancy(e, &poses))
        .collect();
    Ok(Registration {
        root,
        poses,
        tree_edges: tree.into_iter().collect(),
        cycles,
    })
}

/// `E_i^s = E_i^{sl} Ê_i^l`: analysis camera of rig `i` relative to the root wide camera.
pub fn analysis_global_pose(i: RigId, registration: &Registration, network: &RigNetwork) -> Result<RigidTransform, NetworkError> {
    Ok(compose(&network.rig(i)?.rig_extrinsic, registration.pose(i)?))
}

/// `E_ji^s = E_j^{sl} Ê_j^l (E_i^{sl} Ê_i^l)⁻¹`: maps analysis camera `i` coordinates to analysis camera `j`.
pub fn analysis_pose(i: RigId, j: RigId, registration: &Registration, network: &RigNetwork) -> Result<RigidTransform, NetworkError> {
    let ei = analysis_global_pose(i, registration, network)?;
    let ej = analysis_global_pose(j, registration, network)?;
    Ok(compose(&ej, &invert(&ei)))
}

/// Output of [`global_refine`].
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalRefinement {
    pub registration: Registration,
    pub report: BaReport,
    /// Disagreement of every pairwise estimate with the jointly refined poses.
    pub edge_discrepancies: Vec<CycleDiscrepancy>,
}

/// Joint bundle adjustment of all wide cameras with disjoint per-pair point sets.
///
/// The root rig is fixed and the scale is pinned by the root-to-second-rig baseline.
pub fn global_refine(
    network: &RigNetwork,
    registration: &Registration,
    estimates: &[PairEstimate],
    cfg: &SolverConfig,
) -> Result<GlobalRefinement, NetworkError> {
    let problem = joint_problem(network, registration, estimates)?;
    let (solved, report) = bundle_adjust::solve(&problem, cfg)?;
    let mut poses = BTreeMap::new();
    for (rig, cam) in network.rigs().iter().zip(&solved.cameras) {
        poses.insert(rig.id, cam.pose);
    }
    let tree: BTreeSet<(RigId, RigId)> = registration.tree_edges.iter().copied().collect();
    let cycles = estimates
        .iter()
        .filter(|e| !tree.contains(&(e.pair.0.min(e.pair.1), e.pair.0.max(e.pair.1))))
        .map(|e| edge_discrepancy(e, &poses))
        .collect();
    let edges = edge_discrepancies(estimates, &poses);
    Ok(GlobalRefinement {
        registration: Registration { root: registration.root, poses, tree_edges: registration.tree_edges.clone(), cycles },
        report,
        edge_discrepancies: edges,
    })
}

/// The joint problem `global_refine` solves, initialized from the registration.
pub fn joint_problem(network: &RigNetwork, registration: &Registration, estimates: &[PairEstimate]) -> Result<BaProblem, NetworkError> {
    let rigs = network.rigs();
    if rigs.len() < 3 {
        return Err(NetworkError::InvalidNetwork("joint refinement needs at least three rigs".into()));
    }
    let index: BTreeMap<RigId, usize> = rigs.iter().enumerate().map(|(k, r)| (r.id, k)).collect();
    let cameras = rigs
        .iter()
        .map(|r| {
            Ok(BaCamera {
                model: r.wide,
                pose: *registration.pose(r.id)?,
                fixed: r.id == registration.root,
            })
        })
        .collect::<Result<Vec<_>, NetworkError>>()?;
    let mut points = Vec::new();
    let mut observations = Vec::new();
    for e in estimates {
        if !e.is_metric() {
            return Err(NetworkError::MixedScale(e.pair.0, e.pair.1));
        }
        let (ci, cj) = (
            *index.get(&e.pair.0).ok_or(NetworkError::UnknownRig(e.pair.0))?,
            *index.get(&e.pair.1).ok_or(NetworkError::UnknownRig(e.pair.1))?,
        );
        let to_root = invert(registration.pose(e.pair.0)?);
        for (p, &src) in e.points.points.iter().zip(&e.points.sources) {
            let k = points.len();
            points.push(to_root.transform_point(p));
            let c = &e.correspondences[src];
            observations.push(Observation { camera: ci, point: k, pixel: c.x1 });
            observations.push(Observation { camera: cj, point: k, pixel: c.x2 });
        }
    }
    let second = 1;
    let length = registration.pose(rigs[second].id)?.translation.norm();
    Ok(BaProblem {
        cameras,
        points,
        observations,
        scale_gauge: ScaleGauge::FixedBaseline { camera: second, length },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineOptions {
    pub ransac: RansacConfig,
    pub solver: SolverConfig,
    /// Run the joint refinement when the network has three or more rigs.
    pub global_refine: bool,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            ransac: RansacConfig::default(),
            solver: SolverConfig::default(),
            global_refine: true,
        }
    }
}

/// Per-pair record of the pipeline run.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome {
    pub initial: PairEstimate,
    pub refined: PairEstimate,
    pub report: BaReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub pairs: Vec<PairOutcome>,
    pub registration: Registration,
    pub global: Option<GlobalRefinement>,
}

impl CalibrationResult {
    /// Registration after the joint refinement when it ran, the tree registration otherwise.
    pub fn final_registration(&self) -> &Registration {
        self.global.as_ref().map_or(&self.registration, |g| &g.registration)
    }
}

/// Runs the whole calibration over every adjacent pair that has correspondences.
///
/// `correspondences` and `constraints` are keyed by the ordered pair `(i, j)`;
/// `x1` of each correspondence lies in rig `i`'s wide image.
pub fn calibrate_network(
    network: &RigNetwork,
    correspondences: &BTreeMap<(RigId, RigId), Vec<Correspondence>>,
    constraints: &BTreeMap<(RigId, RigId), ScaleConstraint>,
    options: &PipelineOptions,
) -> Result<CalibrationResult, NetworkError> {
    if !network.is_connected() {
        return Err(NetworkError::DisconnectedNetwork);
    }
    let mut pairs = Vec::new();
    for &(i, j) in network.adjacency() {
        let corrs = correspondences
            .get(&(i, j))
            .ok_or_else(|| NetworkError::InvalidNetwork(format!("no correspondences for pair ({i}, {j})")))?;
        let initial = estimate_pair_pose(network.rig(i)?, network.rig(j)?, corrs, &options.ransac)?;
        let initial = match constraints.get(&(i, j)) {
            Some(c) => enforce_scale(&initial, c)?,
            None => initial,
        };
        let (refined, report) = refine_pair(&initial, &options.solver)?;
        pairs.push(PairOutcome { initial, refined, report });
    }
    let refined: Vec<PairEstimate> = pairs.iter().map(|p| p.refined.clone()).collect();
    let registration = register_network(network, &refined)?;
    let global = if options.global_refine && network.rigs().len() >= 3 {
        Some(global_refine(network, &registration, &refined, &options.solver)?)
    } else {
        None
    };
    Ok(CalibrationResult { pairs, registration, global })
}

/// Re-estimates a rig's wide-to-analysis extrinsic from correspondences between its
/// two cameras, using the measured in-rig baseline for scale.
pub fn estimate_rig_extrinsic(
    rig: &HybridRig,
    corrs: &[Correspondence],
    baseline_mm: f64,
    ransac: &RansacConfig,
    solver: &SolverConfig,
) -> Result<(PairEstimate, BaReport), NetworkError> {
    let est = estimate_camera_pair((rig.id, rig.id), &rig.wide, &rig.analysis, corrs, ransac)?;
    let est = enforce_scale(&est, &ScaleConstraint::MeasuredBaseline { distance_mm: baseline_mm })?;
    refine_pair(&est, solver)
}
