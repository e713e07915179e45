//! JSON interchange files: network descriptions, correspondences, poses,
//! ground truth and descriptor sets. Lengths are millimeters and angles degrees.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bundle_adjust::Termination;
use crate::error::SchemaError;
use crate::geometry::{euler_from_rotation, CameraModel, EulerAngles, PixelPoint, RigidTransform};
use crate::matching::{Correspondence, DescriptorSet};
use crate::rig_network::{
    analysis_global_pose, analysis_pose, CalibrationResult, CycleDiscrepancy, HybridRig, RigId, RigNetwork,
    ScaleConstraint,
};
use crate::synthetic::{GroundTruth, PairTruth, RecoveredPoses, Scene};

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String, SchemaError> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn from_json<T: DeserializeOwned>(text: &str) -> Result<T, SchemaError> {
    Ok(serde_json::from_str(text)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, SchemaError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| SchemaError::Json(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SchemaError> {
    fs::write(path, to_json(value)?).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: std::io::Error) -> SchemaError {
    SchemaError::Io { path: path.display().to_string(), message: e.to_string() }
}

fn invalid(msg: impl Into<String>) -> SchemaError {
    SchemaError::Invalid(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformRecord {
    /// Row-major rotation matrix.
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TransformRecord {
    fn from(e: &RigidTransform) -> Self {
        Self { rotation: e.rotation_row_major(), translation: [e.translation.x, e.translation.y, e.translation.z] }
    }
}

impl TryFrom<&TransformRecord> for RigidTransform {
    type Error = SchemaError;

    fn try_from(r: &TransformRecord) -> Result<Self, SchemaError> {
        RigidTransform::from_row_major(r.rotation, r.translation).map_err(|e| invalid(format!("transform: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigRecord {
    pub id: RigId,
    pub wide_camera: CameraModel,
    pub analysis_camera: CameraModel,
    pub rig_extrinsic: TransformRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleConstraintRecord {
    pub pair: (RigId, RigId),
    #[serde(flatten)]
    pub constraint: ScaleConstraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub rigs: Vec<RigRecord>,
    pub adjacency: Vec<(RigId, RigId)>,
    #[serde(default)]
    pub scale_constraints: Vec<ScaleConstraintRecord>,
}

pub type ConstraintMap = BTreeMap<(RigId, RigId), ScaleConstraint>;

impl NetworkFile {
    pub fn from_network(network: &RigNetwork, constraints: &ConstraintMap) -> Self {
        Self {
            rigs: network
                .rigs()
                .iter()
                .map(|r| RigRecord {
                    id: r.id,
                    wide_camera: r.wide,
                    analysis_camera: r.analysis,
                    rig_extrinsic: (&r.rig_extrinsic).into(),
                })
                .collect(),
            adjacency: network.adjacency().to_vec(),
            scale_constraints: constraints
                .iter()
                .map(|(&pair, &constraint)| ScaleConstraintRecord { pair, constraint })
                .collect(),
        }
    }

    /// Validated network plus constraints keyed by the adjacency pair they apply to.
    pub fn to_network(&self) -> Result<(RigNetwork, ConstraintMap), SchemaError> {
        let rigs = self
            .rigs
            .iter()
            .map(|r| {
                Ok(HybridRig {
                    id: r.id,
                    wide: r.wide_camera,
                    analysis: r.analysis_camera,
                    rig_extrinsic: (&r.rig_extrinsic).try_into()?,
                })
            })
            .collect::<Result<Vec<_>, SchemaError>>()?;
        let network = RigNetwork::new(rigs, self.adjacency.clone()).map_err(|e| invalid(e.to_string()))?;
        let mut constraints = ConstraintMap::new();
        for rec in &self.scale_constraints {
            let pair = oriented_pair(&network, rec.pair)
                .ok_or_else(|| invalid(format!("scale constraint for non-adjacent pair {:?}", rec.pair)))?;
            if pair != rec.pair && matches!(rec.constraint, ScaleConstraint::KnownObject { .. }) {
                return Err(invalid(format!("known-object constraint {:?} must use the adjacency orientation", rec.pair)));
            }
            rec.constraint.validate().map_err(|e| invalid(e.to_string()))?;
            if constraints.insert(pair, rec.constraint).is_some() {
                return Err(invalid(format!("pair {:?} has two scale constraints", rec.pair)));
            }
        }
        Ok((network, constraints))
    }
}

/// The adjacency entry matching `pair` in either orientation.
fn oriented_pair(network: &RigNetwork, pair: (RigId, RigId)) -> Option<(RigId, RigId)> {
    network.adjacency().iter().copied().find(|&(a, b)| (a, b) == pair || (b, a) == pair)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CameraLevel {
    #[default]
    Wide,
    Analysis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Manual,
    Matched,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchRecord {
    pub x1: [f64; 2],
    pub x2: [f64; 2],
}

/// Pixel correspondences between rig `pair.0` (`x1`) and rig `pair.1` (`x2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrespondenceFile {
    pub pair: (RigId, RigId),
    #[serde(default)]
    pub level: CameraLevel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<Origin>,
    pub matches: Vec<MatchRecord>,
}

impl CorrespondenceFile {
    pub fn new(pair: (RigId, RigId), level: CameraLevel, origin: Option<Origin>, corrs: &[Correspondence]) -> Self {
        Self {
            pair,
            level,
            origin,
            matches: corrs.iter().map(|c| MatchRecord { x1: [c.x1.x, c.x1.y], x2: [c.x2.x, c.x2.y] }).collect(),
        }
    }

    pub fn correspondences(&self) -> Vec<Correspondence> {
        self.matches
            .iter()
            .map(|m| Correspondence::new(PixelPoint::new(m.x1[0], m.x1[1]), PixelPoint::new(m.x2[0], m.x2[1])))
            .collect()
    }

    /// Checks that both rigs exist and every pixel lies on its sensor.
    pub fn validate(&self, network: &RigNetwork) -> Result<(), SchemaError> {
        let camera = |id| {
            let rig = network.rig(id).map_err(|e| invalid(e.to_string()))?;
            Ok::<_, SchemaError>(match self.level {
                CameraLevel::Wide => rig.wide,
                CameraLevel::Analysis => rig.analysis,
            })
        };
        let (c1, c2) = (camera(self.pair.0)?, camera(self.pair.1)?);
        for (k, m) in self.matches.iter().enumerate() {
            let (p1, p2) = (PixelPoint::new(m.x1[0], m.x1[1]), PixelPoint::new(m.x2[0], m.x2[1]));
            if !c1.contains(&p1) || !c2.contains(&p2) {
                return Err(invalid(format!("pair {:?}: match {k} lies outside the sensor", self.pair)));
            }
        }
        Ok(())
    }
}

pub type CorrespondenceMap = BTreeMap<(RigId, RigId), Vec<Correspondence>>;

/// Reads every `*.json` correspondence file of a directory, in file-name order.
pub fn read_correspondence_dir(dir: &Path) -> Result<Vec<(PathBuf, CorrespondenceFile)>, SchemaError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_error(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.into_iter().map(|p| read_json(&p).map(|f| (p, f))).collect()
}

/// Wide-level correspondences keyed and oriented by the network's adjacency pairs.
pub fn wide_correspondences(network: &RigNetwork, files: &[CorrespondenceFile]) -> Result<CorrespondenceMap, SchemaError> {
    let mut out = CorrespondenceMap::new();
    for f in files.iter().filter(|f| f.level == CameraLevel::Wide) {
        f.validate(network)?;
        let pair = oriented_pair(network, f.pair)
            .ok_or_else(|| invalid(format!("correspondences for non-adjacent pair {:?}", f.pair)))?;
        let mut corrs = f.correspondences();
        if pair != f.pair {
            corrs = corrs.iter().map(Correspondence::swapped).collect();
        }
        if out.insert(pair, corrs).is_some() {
            return Err(invalid(format!("pair {:?} has two wide correspondence files", f.pair)));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseRecord {
    pub rotation: [f64; 9],
    pub translation: [f64; 3],
    /// Reporting only; Z-Y-X convention.
    pub euler_deg: EulerAngles,
    pub gimbal_lock: bool,
}

impl From<&RigidTransform> for PoseRecord {
    fn from(e: &RigidTransform) -> Self {
        let t = TransformRecord::from(e);
        let euler = euler_from_rotation(&e.rotation);
        // Adding zero turns -0.0 into 0.0.
        let a = euler.angles;
        let euler_deg = EulerAngles::new(a.psi + 0.0, a.theta + 0.0, a.phi + 0.0);
        Self { rotation: t.rotation, translation: t.translation, euler_deg, gimbal_lock: euler.gimbal_lock }
    }
}

impl TryFrom<&PoseRecord> for RigidTransform {
    type Error = SchemaError;

    fn try_from(r: &PoseRecord) -> Result<Self, SchemaError> {
        RigidTransform::from_row_major(r.rotation, r.translation).map_err(|e| invalid(format!("pose: {e}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RigPoses {
    pub id: RigId,
    /// Reference wide camera to this rig's wide camera.
    pub wide: PoseRecord,
    /// Reference wide camera to this rig's analysis camera.
    pub analysis: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub pair: (RigId, RigId),
    pub correspondences: usize,
    pub inliers: usize,
    pub initial_mean_reprojection_px: f64,
    pub mean_reprojection_px: f64,
    pub ba_iterations: usize,
    pub ba_termination: Termination,
    /// Wide camera `pair.0` to wide camera `pair.1`, as refined for this pair alone.
    pub wide_relative_pose: PoseRecord,
    /// Analysis camera `pair.0` to analysis camera `pair.1`, from the registered poses.
    pub analysis_relative_pose: PoseRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalRecord {
    pub ba_iterations: usize,
    pub initial_mean_reprojection_px: f64,
    pub mean_reprojection_px: f64,
    pub ba_termination: Termination,
    pub cycles: Vec<CycleDiscrepancy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseFile {
    /// Rig whose wide camera is the reference frame.
    pub reference_rig: RigId,
    pub rigs: Vec<RigPoses>,
    pub pairs: Vec<PairRecord>,
    /// Loop discrepancies of the spanning-tree registration.
    pub cycles: Vec<CycleDiscrepancy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub global_refinement: Option<GlobalRecord>,
}

impl PoseFile {
    pub fn from_calibration(result: &CalibrationResult, network: &RigNetwork) -> Result<Self, SchemaError> {
        let reg = result.final_registration();
        let err = |e: crate::NetworkError| invalid(e.to_string());
        let rigs = reg
            .poses
            .iter()
            .map(|(&id, pose)| {
                Ok(RigPoses {
                    id,
                    wide: pose.into(),
                    analysis: (&analysis_global_pose(id, reg, network).map_err(err)?).into(),
                })
            })
            .collect::<Result<Vec<_>, SchemaError>>()?;
        let pairs = result
            .pairs
            .iter()
            .map(|p| {
                let (i, j) = p.refined.pair;
                Ok(PairRecord {
                    pair: (i, j),
                    correspondences: p.refined.correspondences.len(),
                    inliers: p.refined.inlier_count(),
                    initial_mean_reprojection_px: p.report.initial_mean_error,
                    mean_reprojection_px: p.report.final_mean_error,
                    ba_iterations: p.report.iterations,
                    ba_termination: p.report.termination,
                    wide_relative_pose: (&p.refined.pose).into(),
                    analysis_relative_pose: (&analysis_pose(i, j, reg, network).map_err(err)?).into(),
                })
            })
            .collect::<Result<Vec<_>, SchemaError>>()?;
        Ok(Self {
            reference_rig: reg.root,
            rigs,
            pairs,
            cycles: result.registration.cycles.clone(),
            global_refinement: result.global.as_ref().map(|g| GlobalRecord {
                ba_iterations: g.report.iterations,
                initial_mean_reprojection_px: g.report.initial_mean_error,
                mean_reprojection_px: g.report.final_mean_error,
                ba_termination: g.report.termination,
                cycles: g.registration.cycles.clone(),
            }),
        })
    }

    pub fn wide_pose(&self, id: RigId) -> Result<RigidTransform, SchemaError> {
        self.rig(id)?.wide.try_into_transform()
    }

    pub fn analysis_pose(&self, id: RigId) -> Result<RigidTransform, SchemaError> {
        self.rig(id)?.analysis.try_into_transform()
    }

    fn rig(&self, id: RigId) -> Result<&RigPoses, SchemaError> {
        self.rigs.iter().find(|r| r.id == id).ok_or_else(|| invalid(format!("rig {id} is not in the pose file")))
    }

    pub fn to_recovered(&self) -> Result<RecoveredPoses, SchemaError> {
        let mut rec = RecoveredPoses::default();
        for r in &self.rigs {
            rec.wide.insert(r.id, r.wide.try_into_transform()?);
            rec.analysis.insert(r.id, r.analysis.try_into_transform()?);
        }
        if !self.pairs.is_empty() {
            rec.mean_reprojection_error_px =
                Some(self.pairs.iter().map(|p| p.mean_reprojection_px).sum::<f64>() / self.pairs.len() as f64);
        }
        Ok(rec)
    }
}

impl PoseRecord {
    pub fn try_into_transform(&self) -> Result<RigidTransform, SchemaError> {
        self.try_into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthRig {
    pub id: RigId,
    pub wide_pose: TransformRecord,
    pub rig_extrinsic: TransformRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthPair {
    pub pair: (RigId, RigId),
    pub wide_points: Vec<[f64; 3]>,
    pub inliers: Vec<bool>,
    pub analysis_points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthFile {
    pub reference_rig: RigId,
    pub rigs: Vec<TruthRig>,
    pub pairs: Vec<TruthPair>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

impl From<&GroundTruth> for GroundTruthFile {
    fn from(t: &GroundTruth) -> Self {
        Self {
            reference_rig: t.root,
            rigs: t
                .wide_poses
                .iter()
                .map(|(&id, p)| TruthRig { id, wide_pose: p.into(), rig_extrinsic: (&t.rig_extrinsics[&id]).into() })
                .collect(),
            pairs: t
                .pairs
                .iter()
                .map(|p| TruthPair {
                    pair: p.pair,
                    wide_points: p.wide_points.iter().map(arr).collect(),
                    inliers: p.inliers.clone(),
                    analysis_points: p.analysis_points.iter().map(arr).collect(),
                })
                .collect(),
        }
    }
}

impl TryFrom<&GroundTruthFile> for GroundTruth {
    type Error = SchemaError;

    fn try_from(f: &GroundTruthFile) -> Result<Self, SchemaError> {
        let mut t = GroundTruth { root: f.reference_rig, wide_poses: BTreeMap::new(), rig_extrinsics: BTreeMap::new(), pairs: Vec::new() };
        for r in &f.rigs {
            if t.wide_poses.insert(r.id, (&r.wide_pose).try_into()?).is_some() {
                return Err(invalid(format!("rig {} listed twice", r.id)));
            }
            t.rig_extrinsics.insert(r.id, (&r.rig_extrinsic).try_into()?);
        }
        if !t.wide_poses.contains_key(&t.root) {
            return Err(invalid("reference rig is not listed"));
        }
        let vecs = |v: &[[f64; 3]]| v.iter().map(|p| Vector3::from(*p)).collect();
        for p in &f.pairs {
            if p.inliers.len() != p.wide_points.len() {
                return Err(invalid(format!("pair {:?}: inlier flags do not match points", p.pair)));
            }
            t.pairs.push(PairTruth {
                pair: p.pair,
                wide_points: vecs(&p.wide_points),
                inliers: p.inliers.clone(),
                analysis_points: vecs(&p.analysis_points),
            });
        }
        Ok(t)
    }
}

/// Files describing a synthetic scene, named as `simulate` writes them.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneFiles {
    pub network: NetworkFile,
    /// File name (inside the correspondence directory) and content.
    pub correspondences: Vec<(String, CorrespondenceFile)>,
    pub truth: GroundTruthFile,
}

pub const NETWORK_FILE: &str = "network.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const CORRESPONDENCE_DIR: &str = "correspondences";
pub const VALIDATION_DIR: &str = "validation";

impl SceneFiles {
    pub fn from_scene(scene: &Scene) -> Self {
        let mut correspondences = Vec::new();
        for p in &scene.pairs {
            let (i, j) = p.pair;
            correspondences.push((
                format!("{CORRESPONDENCE_DIR}/wide_{i}_{j}.json"),
                CorrespondenceFile::new(p.pair, CameraLevel::Wide, Some(Origin::Synthetic), &p.wide),
            ));
            correspondences.push((
                format!("{VALIDATION_DIR}/analysis_{i}_{j}.json"),
                CorrespondenceFile::new(p.pair, CameraLevel::Analysis, Some(Origin::Synthetic), &p.analysis),
            ));
        }
        Self {
            network: NetworkFile::from_network(&scene.network, &scene.scale_constraints()),
            correspondences,
            truth: (&scene.truth).into(),
        }
    }

    /// Writes `network.json`, `truth.json` and the correspondence directories under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SchemaError> {
        for sub in [CORRESPONDENCE_DIR, VALIDATION_DIR] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| io_error(&d, e))?;
        }
        write_json(&dir.join(NETWORK_FILE), &self.network)?;
        write_json(&dir.join(TRUTH_FILE), &self.truth)?;
        for (name, f) in &self.correspondences {
            write_json(&dir.join(name), f)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorImage {
    pub keypoints: Vec<[f64; 2]>,
    pub descriptors: Vec<Vec<f64>>,
}

impl DescriptorImage {
    pub fn to_set(&self) -> Result<DescriptorSet, SchemaError> {
        DescriptorSet::new(self.descriptors.clone(), self.keypoints.iter().map(|k| PixelPoint::new(k[0], k[1])).collect())
            .map_err(|e| invalid(e.to_string()))
    }
}

/// Keypoints and descriptors of two images to be matched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptorFile {
    pub pair: (RigId, RigId),
    #[serde(default)]
    pub level: CameraLevel,
    pub image1: DescriptorImage,
    pub image2: DescriptorImage,
}

/// Pixels whose epipolar lines are requested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointsFile {
    pub points: Vec<[f64; 2]>,
}
