use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::se3::SE3Transform;
use super::so3::RotationMatrix;
use super::{ensure_finite3, GeometryError, Result};

/// Minimum camera-frame depth accepted by [`project_pinhole`].
pub const MIN_DEPTH: f64 = 1e-6;

/// Fixed camera-to-world transform `T_{c→w}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraExtrinsic {
    pub t_cam_to_world: SE3Transform,
}

impl CameraExtrinsic {
    pub fn new(t_cam_to_world: SE3Transform) -> Self {
        CameraExtrinsic { t_cam_to_world }
    }

    /// Camera at `eye` with its optical (+z) axis pointing at `target`, image
    /// x to the right and image y towards world `-up`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Result<Self> {
        ensure_finite3(&eye, "camera eye")?;
        ensure_finite3(&target, "camera target")?;
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_columns(&[x, y, z]);
        Ok(CameraExtrinsic { t_cam_to_world: SE3Transform::new(RotationMatrix::new(r)?, eye) })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsic {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl CameraIntrinsic {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        let k = CameraIntrinsic { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.fx, self.fy, self.cx, self.cy, self.width, self.height];
        if !all.iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite("camera intrinsic"));
        }
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(GeometryError::InvalidIntrinsic(format!(
                "focal lengths must be positive, got ({}, {})",
                self.fx, self.fy
            )));
        }
        if !(0.0..self.width).contains(&self.cx) || !(0.0..self.height).contains(&self.cy) {
            return Err(GeometryError::InvalidIntrinsic(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }
}

/// Pixel coordinates of a projected point; `in_frame` is false when the
/// pixel falls outside `[0, width) x [0, height)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub uv: [f64; 2],
    pub in_frame: bool,
}

pub fn project_pinhole(p_cam: &Vector3<f64>, intr: &CameraIntrinsic) -> Result<Projection> {
    ensure_finite3(p_cam, "camera point")?;
    if p_cam.z <= MIN_DEPTH {
        return Err(GeometryError::BehindCamera { z: p_cam.z });
    }
    let u = intr.fx * p_cam.x / p_cam.z + intr.cx;
    let v = intr.fy * p_cam.y / p_cam.z + intr.cy;
    let in_frame = (0.0..intr.width).contains(&u) && (0.0..intr.height).contains(&v);
    Ok(Projection { uv: [u, v], in_frame })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intr(fx: f64, cx: f64, cy: f64) -> CameraIntrinsic {
        CameraIntrinsic { fx, fy: fx, cx, cy, width: 224.0, height: 224.0 }
    }

    #[test]
    fn optical_axis_hits_principal_point() {
        let p = project_pinhole(&Vector3::new(0.0, 0.0, 1.0), &intr(100.0, 0.0, 0.0)).unwrap();
        assert_eq!(p.uv, [0.0, 0.0]);
    }

    #[test]
    fn unit_slope_ray() {
        let p = project_pinhole(&Vector3::new(1.0, 0.0, 1.0), &intr(100.0, 0.0, 0.0)).unwrap();
        assert_eq!(p.uv, [100.0, 0.0]);
        assert!(p.in_frame);
    }

    #[test]
    fn out_of_frame_is_flagged_not_clamped() {
        let p = project_pinhole(&Vector3::new(5.0, 0.0, 1.0), &intr(100.0, 112.0, 112.0)).unwrap();
        assert_eq!(p.uv[0], 612.0);
        assert!(!p.in_frame);
    }

    #[test]
    fn behind_camera_errors() {
        let e = project_pinhole(&Vector3::new(0.0, 0.0, 1e-7), &intr(100.0, 0.0, 0.0));
        assert!(matches!(e, Err(GeometryError::BehindCamera { .. })));
    }

    #[test]
    fn intrinsic_validation() {
        assert!(CameraIntrinsic::new(0.0, 1.0, 1.0, 1.0, 10.0, 10.0).is_err());
        assert!(CameraIntrinsic::new(1.0, 1.0, 10.0, 1.0, 10.0, 10.0).is_err());
        assert!(CameraIntrinsic::new(1.0, 1.0, 0.0, 9.5, 10.0, 10.0).is_ok());
    }

    #[test]
    fn look_at_points_optical_axis_at_target() {
        let eye = Vector3::new(0.0, -0.7, 0.7);
        let ext = CameraExtrinsic::look_at(eye, Vector3::zeros(), Vector3::z()).unwrap();
        let world_to_cam = crate::geometry::se3_inverse(&ext.t_cam_to_world);
        let origin_in_cam = world_to_cam.transform_point(&Vector3::zeros());
        assert!(origin_in_cam.x.abs() < 1e-12 && origin_in_cam.y.abs() < 1e-12);
        assert!((origin_in_cam.z - eye.norm()).abs() < 1e-12);
    }
}
