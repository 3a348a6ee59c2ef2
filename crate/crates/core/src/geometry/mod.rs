//! Pinhole camera model, projection-matrix constraints and stereo
//! reconstruction.
//!
//! All operations are generic over [`Scalar`](crate::diff::Scalar) so the same
//! code runs on `f64` and on the differentiation tape.

mod camera;
mod constraints;
pub mod linalg;
mod projection;
mod reconstruct;

pub use camera::{CameraParams, ParamId, Point3, PointImage};
pub use constraints::{
    axis_plane_residuals, dehomogenize, rotation_residuals, vanishing_points, world_center,
    ConstraintTargets,
};
pub use linalg::{Mat3, Mat34, Vec2, Vec3, Vec4};
pub use projection::{
    build_intrinsics, build_rotation_pitch, compose_projection, project_homogeneous,
    project_point, ProjectionMatrix, ProjectionModel,
};
pub use reconstruct::{
    camera_to_world, project_stereo, reconstruct_3d, reconstruct_camera_frame, reconstruct_observations,
    world_to_camera,
    StereoObservation,
};

use thiserror::Error;

/// Absolute threshold below which a homogeneous divisor counts as zero.
pub const DEHOMOGENIZE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum GeometryError {
    #[error("focal lengths must be positive (f_x = {f_x}, f_y = {f_y})")]
    NonPositiveFocal { f_x: f64, f_y: f64 },
    #[error("point projects to infinity")]
    PointAtInfinity,
    #[error("disparity {0} is not positive")]
    ZeroDisparity(f64),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
}
