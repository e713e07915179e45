//! Relative pose calibration of long-focal analysis cameras through the
//! wide-FOV cameras that share their rigs.

pub mod bundle_adjust;
pub mod epipolar;
pub mod error;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod rig_network;
pub mod synthetic;
pub mod triangulation;

pub use error::{
    BaError, EpipolarError, GeometryError, MatchingError, NetworkError, SchemaError, SyntheticError, TriangulationError,
};
