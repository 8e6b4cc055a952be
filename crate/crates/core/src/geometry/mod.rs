//! Rigid-body geometry in 64-bit floating point.
//!
//! Rotations are carried as validated 3x3 matrices and parameterized by the
//! exponential (axis-angle) chart. Rigid transforms keep the rotation and
//! translation blocks separately and expose the homogeneous 4x4 form on
//! demand, so the bottom row is `[0, 0, 0, 1]` by construction.
//!
//! The relative-action map turns a pair of poses into a translation plus an
//! axis-angle rotation expressed in the frame of the first pose, and
//! [`apply_action`] is its exact left inverse.

mod camera;
mod charts;
mod se3;
mod so3;

pub use camera::{project_pinhole, CameraExtrinsic, CameraIntrinsic, Projection};
pub use charts::{rotation_convert, EulerAngles, Quaternion, Rotation, RotationChart};
pub use se3::{
    apply_action, camera_to_world, pose_to_se3, relative_action, se3_compose, se3_inverse,
    se3_to_pose, world_to_camera, PoseVec, RelativeAction, RelativeMotion, SE3Transform,
};
pub use so3::{exp_so3, hat, log_so3, vee, AxisAngle, RotationMatrix};

pub use nalgebra::{Matrix3, Matrix4, Vector3};

use thiserror::Error;

/// Tolerance on `RᵀR = I` and `det R = 1` for accepted rotation matrices.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Relative rotations at or above this angle are flagged as leaving the
/// axis-angle chart.
pub const CHART_LIMIT: f64 = std::f64::consts::PI - 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid rotation: orthogonality residual {orthogonality:.3e}, determinant {det:.12}")]
    InvalidRotation { orthogonality: f64, det: f64 },
    #[error("quaternion norm {0} is not unit")]
    NonUnitQuaternion(f64),
    #[error("degenerate Euler chart: pitch {pitch} is within 1e-6 of +/- pi/2")]
    DegenerateChart { pitch: f64 },
    #[error("point is behind the camera (z = {z})")]
    BehindCamera { z: f64 },
    #[error("invalid camera intrinsic: {0}")]
    InvalidIntrinsic(String),
    #[error("invalid homogeneous matrix: bottom row is {0:?}")]
    InvalidHomogeneous([f64; 4]),
}

pub type Result<T> = std::result::Result<T, GeometryError>;

pub(crate) fn ensure_finite3(v: &Vector3<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NonFinite(what))
    }
}
