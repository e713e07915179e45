use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite value")]
    NonFinite,
    #[error("matrix is not a rotation (‖RᵀR − I‖ = {orthonormality:e}, det = {determinant})")]
    NotARotation { orthonormality: f64, determinant: f64 },
    #[error("invalid camera model: {0}")]
    InvalidCamera(String),
    #[error("point behind the camera (depth {depth:e})")]
    BehindCamera { depth: f64 },
    #[error("undistortion of ({x}, {y}) did not converge")]
    NonConvergent { x: f64, y: f64 },
}

impl GeometryError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::NonFinite => "NonFinite",
            Self::NotARotation { .. } => "NotARotation",
            Self::InvalidCamera(_) => "InvalidCamera",
            Self::BehindCamera { .. } => "BehindCamera",
            Self::NonConvergent { .. } => "NonConvergent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatchingError {
    #[error("target set holds {0} descriptors, at least 2 are required")]
    Underpopulated(usize),
    #[error("ratio threshold {0} outside (0, 1)")]
    InvalidTau(f64),
    #[error("inconsistent descriptor set: {0}")]
    Inconsistent(String),
}

impl MatchingError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Underpopulated(_) => "Underpopulated",
            Self::InvalidTau(_) => "InvalidTau",
            Self::Inconsistent(_) => "InconsistentDescriptors",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EpipolarError {
    #[error("{got} correspondences, at least {need} required")]
    TooFewPoints { got: usize, need: usize },
    #[error("degenerate point configuration")]
    Degenerate,
    #[error("zero baseline")]
    ZeroBaseline,
    #[error("RANSAC found only {best} inliers")]
    NoConsensus { best: usize },
    #[error("chirality test is ambiguous (front counts {counts:?})")]
    ChiralityAmbiguous { counts: [usize; 4] },
    #[error("point is the epipole, the epipolar line is undefined")]
    DegenerateLine,
    #[error("invalid RANSAC configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl EpipolarError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::TooFewPoints { .. } => "TooFewPoints",
            Self::Degenerate => "Degenerate",
            Self::ZeroBaseline => "ZeroBaseline",
            Self::NoConsensus { .. } => "NoConsensus",
            Self::ChiralityAmbiguous { .. } => "ChiralityAmbiguous",
            Self::DegenerateLine => "DegenerateLine",
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::Geometry(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TriangulationError {
    #[error("rays are parallel or the point lies at infinity")]
    AtInfinity,
    #[error("triangulated point lies behind a camera")]
    BehindCamera,
    #[error("no point survived triangulation")]
    EmptyResult,
    #[error("no observations")]
    NoObservations,
    #[error("observation {0} references a missing camera or point")]
    InvalidIndex(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl TriangulationError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::AtInfinity => "AtInfinity",
            Self::BehindCamera => "BehindCamera",
            Self::EmptyResult => "EmptyResult",
            Self::NoObservations => "NoObservations",
            Self::InvalidIndex(_) => "InvalidIndex",
            Self::Geometry(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaError {
    #[error("invalid bundle adjustment problem: {0}")]
    InvalidProblem(String),
    #[error("observation {observation} projects behind its camera")]
    BehindCamera { observation: usize },
    #[error("damped normal equations not solvable")]
    NumericalFailure,
    #[error("no descent step found")]
    NoDescent,
}

impl BaError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::InvalidProblem(_) => "InvalidProblem",
            Self::BehindCamera { .. } => "BehindCamera",
            Self::NumericalFailure => "NumericalFailure",
            Self::NoDescent => "NoDescent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("rig network is disconnected")]
    DisconnectedNetwork,
    #[error("pair ({0}, {1}) has no metric scale")]
    MixedScale(u32, u32),
    #[error("unknown rig {0}")]
    UnknownRig(u32),
    #[error("scale constraint distance is degenerate ({0:e})")]
    DegenerateConstraint(f64),
    #[error("invalid scale constraint: {0}")]
    InvalidConstraint(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error(transparent)]
    Epipolar(#[from] EpipolarError),
    #[error(transparent)]
    Triangulation(#[from] TriangulationError),
    #[error(transparent)]
    BundleAdjustment(#[from] BaError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

impl NetworkError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::DisconnectedNetwork => "DisconnectedNetwork",
            Self::MixedScale(..) => "MixedScale",
            Self::UnknownRig(_) => "UnknownRig",
            Self::DegenerateConstraint(_) => "DegenerateConstraint",
            Self::InvalidConstraint(_) => "InvalidConstraint",
            Self::InvalidNetwork(_) => "InvalidNetwork",
            Self::Epipolar(e) => e.name(),
            Self::Triangulation(e) => e.name(),
            Self::BundleAdjustment(e) => e.name(),
            Self::Geometry(e) => e.name(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SyntheticError {
    #[error("invalid scene configuration: {0}")]
    InvalidConfig(String),
    #[error("infeasible scene configuration: {0}")]
    InfeasibleConfig(String),
    #[error("rig sets differ between truth and estimate")]
    RigMismatch,
}

impl SyntheticError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::InvalidConfig(_) => "InvalidConfig",
            Self::InfeasibleConfig(_) => "InfeasibleConfig",
            Self::RigMismatch => "RigMismatch",
        }
    }
}

/// Malformed or inconsistent interchange files.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemaError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{0}")]
    Json(String),
    #[error("{0}")]
    Invalid(String),
}

impl SchemaError {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Io { .. } => "IoError",
            Self::Json(_) => "JsonError",
            Self::Invalid(_) => "SchemaError",
        }
    }
}

impl From<serde_json::Error> for SchemaError {
    fn from(e: serde_json::Error) -> Self {
        Self::Json(e.to_string())
    }
}
