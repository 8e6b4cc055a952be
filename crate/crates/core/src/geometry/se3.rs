use nalgebra::{Matrix4, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::CameraExtrinsic;
use super::so3::{exp_so3, log_so3, AxisAngle, RotationMatrix};
use super::{ensure_finite3, GeometryError, Result, CHART_LIMIT};

/// Position plus axis-angle rotation, `e = [p, θ]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseVec {
    pub p: Vector3<f64>,
    pub theta: AxisAngle,
}

impl PoseVec {
    pub fn new(p: Vector3<f64>, theta: AxisAngle) -> Self {
        PoseVec { p, theta }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.p.x, self.p.y, self.p.z, self.theta.0.x, self.theta.0.y, self.theta.0.z]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        PoseVec {
            p: Vector3::new(v[0], v[1], v[2]),
            theta: AxisAngle::new(v[3], v[4], v[5]),
        }
    }
}

/// Rigid transform with the homogeneous block layout `[[R, t], [0, 1]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SE3Transform {
    pub rotation: RotationMatrix,
    pub translation: Vector3<f64>,
}

impl SE3Transform {
    pub fn identity() -> Self {
        SE3Transform { rotation: RotationMatrix::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: RotationMatrix, translation: Vector3<f64>) -> Self {
        SE3Transform { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        SE3Transform { rotation: RotationMatrix::identity(), translation: t }
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(self.rotation.matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Self> {
        let bottom = [m[(3, 0)], m[(3, 1)], m[(3, 2)], m[(3, 3)]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(GeometryError::InvalidHomogeneous(bottom));
        }
        let rotation = RotationMatrix::new(m.fixed_view::<3, 3>(0, 0).into_owned())?;
        let translation = m.fixed_view::<3, 1>(0, 3).into_owned();
        ensure_finite3(&translation, "translation")?;
        Ok(SE3Transform { rotation, translation })
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.matrix() * p + self.translation
    }

    /// Re-checks rotation invariants and translation finiteness.
    pub fn validate(&self) -> Result<()> {
        RotationMatrix::new(*self.rotation.matrix())?;
        ensure_finite3(&self.translation, "translation")
    }
}

/// Rigid part of a relative motion, with a flag raised when the rotation
/// angle reaches the edge of the axis-angle chart.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMotion {
    pub dp: Vector3<f64>,
    pub dtheta: AxisAngle,
    pub chart_violation: bool,
}

/// Six-DoF relative motion plus gripper command (0 open, 1 closed).
///
/// The gripper never enters the SE(3) algebra.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeAction {
    pub dp: Vector3<f64>,
    pub dtheta: AxisAngle,
    pub gripper: f64,
}

impl RelativeAction {
    pub fn zero(gripper: f64) -> Self {
        RelativeAction { dp: Vector3::zeros(), dtheta: AxisAngle::ZERO, gripper }
    }

    pub fn from_motion(m: RelativeMotion, gripper: f64) -> Self {
        RelativeAction { dp: m.dp, dtheta: m.dtheta, gripper }
    }

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.dp.x,
            self.dp.y,
            self.dp.z,
            self.dtheta.0.x,
            self.dtheta.0.y,
            self.dtheta.0.z,
            self.gripper,
        ]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        RelativeAction {
            dp: Vector3::new(v[0], v[1], v[2]),
            dtheta: AxisAngle::new(v[3], v[4], v[5]),
            gripper: v[6],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }
}

pub fn pose_to_se3(e: &PoseVec) -> Result<SE3Transform> {
    ensure_finite3(&e.p, "position")?;
    Ok(SE3Transform { rotation: exp_so3(&e.theta)?, translation: e.p })
}

pub fn se3_to_pose(t: &SE3Transform) -> Result<PoseVec> {
    ensure_finite3(&t.translation, "translation")?;
    Ok(PoseVec { p: t.translation, theta: log_so3(&t.rotation)? })
}

pub fn se3_compose(a: &SE3Transform, b: &SE3Transform) -> SE3Transform {
    SE3Transform {
        rotation: a.rotation.compose(&b.rotation),
        translation: a.rotation.matrix() * b.translation + a.translation,
    }
}

pub fn se3_inverse(t: &SE3Transform) -> SE3Transform {
    let rt = t.rotation.transpose();
    SE3Transform { translation: -(rt.matrix() * t.translation), rotation: rt }
}

/// `ρ(T_a⁻¹ T_b)` as translation plus axis-angle.
pub fn relative_action(t_a: &SE3Transform, t_b: &SE3Transform) -> Result<RelativeMotion> {
    t_a.validate()?;
    t_b.validate()?;
    let rel = se3_compose(&se3_inverse(t_a), t_b);
    let dtheta = log_so3(&rel.rotation)?;
    Ok(RelativeMotion {
        dp: rel.translation,
        chart_violation: dtheta.angle() >= CHART_LIMIT,
        dtheta,
    })
}

/// `T · pose_to_se3(dp, dθ)`; the gripper field is ignored.
pub fn apply_action(t: &SE3Transform, a: &RelativeAction) -> Result<SE3Transform> {
    let delta = pose_to_se3(&PoseVec { p: a.dp, theta: a.dtheta })?;
    Ok(se3_compose(t, &delta))
}

/// Camera-frame readout `T_{c→w}⁻¹ · T`.
pub fn world_to_camera(t_world: &SE3Transform, ext: &CameraExtrinsic) -> SE3Transform {
    se3_compose(&se3_inverse(&ext.t_cam_to_world), t_world)
}

pub fn camera_to_world(t_cam: &SE3Transform, ext: &CameraExtrinsic) -> SE3Transform {
    se3_compose(&ext.t_cam_to_world, t_cam)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> SE3Transform {
        pose_to_se3(&PoseVec::new(Vector3::new(0.3, -0.2, 0.5), AxisAngle::new(0.4, -1.1, 0.7)))
            .unwrap()
    }

    #[test]
    fn zero_pose_is_identity() {
        let t = pose_to_se3(&PoseVec::new(Vector3::zeros(), AxisAngle::ZERO)).unwrap();
        assert_eq!(t.to_homogeneous(), Matrix4::identity());
    }

    #[test]
    fn pure_translation() {
        let t = pose_to_se3(&PoseVec::new(Vector3::new(1.0, 2.0, 3.0), AxisAngle::ZERO)).unwrap();
        let mut m = Matrix4::identity();
        m[(0, 3)] = 1.0;
        m[(1, 3)] = 2.0;
        m[(2, 3)] = 3.0;
        assert_eq!(t.to_homogeneous(), m);
    }

    #[test]
    fn inverse_of_translation() {
        let t = SE3Transform::from_translation(Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(se3_inverse(&t).translation, Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(se3_inverse(&SE3Transform::identity()), SE3Transform::identity());
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let t = sample();
        assert_eq!(se3_compose(&t, &SE3Transform::identity()), t);
        let id = se3_compose(&t, &se3_inverse(&t)).to_homogeneous();
        assert!((id - Matrix4::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn relative_action_cases() {
        let t = sample();
        let m = relative_action(&t, &t).unwrap();
        assert!(m.dp.norm() < 1e-15 && m.dtheta.angle() < 1e-15);
        let b = SE3Transform::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let m = relative_action(&SE3Transform::identity(), &b).unwrap();
        assert_eq!(m.dp, Vector3::new(0.1, 0.0, 0.0));
        assert_eq!(m.dtheta, AxisAngle::ZERO);
        assert!(!m.chart_violation);
    }

    #[test]
    fn relative_action_flags_half_turn() {
        let b = pose_to_se3(&PoseVec::new(Vector3::zeros(), AxisAngle::new(0.0, 0.0, std::f64::consts::PI)))
            .unwrap();
        assert!(relative_action(&SE3Transform::identity(), &b).unwrap().chart_violation);
    }

    #[test]
    fn apply_zero_and_unit_actions() {
        let t = sample();
        assert_eq!(apply_action(&t, &RelativeAction::zero(1.0)).unwrap(), t);
        let a = RelativeAction { dp: Vector3::new(0.0, 0.0, 0.05), dtheta: AxisAngle::ZERO, gripper: 0.0 };
        let moved = apply_action(&SE3Transform::identity(), &a).unwrap();
        assert_eq!(moved.translation, Vector3::new(0.0, 0.0, 0.05));
    }

    #[test]
    fn camera_readout_cases() {
        let t = sample();
        let identity_ext = CameraExtrinsic::new(SE3Transform::identity());
        assert_eq!(world_to_camera(&t, &identity_ext), t);
        let ext = CameraExtrinsic::new(t);
        let id = world_to_camera(&t, &ext).to_homogeneous();
        assert!((id - Matrix4::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn homogeneous_bottom_row_is_checked() {
        let mut m = Matrix4::identity();
        m[(3, 0)] = 0.5;
        assert!(SE3Transform::from_homogeneous(&m).is_err());
        let t = sample();
        assert_eq!(SE3Transform::from_homogeneous(&t.to_homogeneous()).unwrap(), t);
    }
}
