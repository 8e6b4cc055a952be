use serde::{Deserialize, Serialize};

use super::windows::TrainingWindow;
use super::{DatasetError, DatasetResult};
use crate::geometry::{project_pinhole, GeometryError, Rotation, RotationChart, CHART_LIMIT};
use crate::simworld::{CameraModel, DepthMode};

/// What the predictor's hidden states are supervised to read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrajTarget {
    /// No predictor at all.
    NoTraj,
    /// Camera-frame SE(3) targets on a parallel branch that does not feed the decoder.
    AuxTraj,
    /// Normalized image coordinates of the end-effector.
    Traj2D,
    /// Camera-frame position only.
    Traj3DPos,
    TrajWorldSE3,
    TrajCameraSE3,
}

impl TrajTarget {
    pub const ALL: [TrajTarget; 6] = [
        TrajTarget::NoTraj,
        TrajTarget::AuxTraj,
        TrajTarget::Traj2D,
        TrajTarget::Traj3DPos,
        TrajTarget::TrajWorldSE3,
        TrajTarget::TrajCameraSE3,
    ];

    pub fn is_se3(self) -> bool {
        matches!(self, TrajTarget::AuxTraj | TrajTarget::TrajWorldSE3 | TrajTarget::TrajCameraSE3)
    }

    /// Whether the action decoder reads the predictor's hidden states.
    pub fn decoder_reads_trajectory(self) -> bool {
        !matches!(self, TrajTarget::NoTraj | TrajTarget::AuxTraj)
    }
}

/// Ablation configuration: supervision target, rotation chart for SE(3)
/// targets, and depth featurization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SupervisionVariant {
    pub target: TrajTarget,
    pub rotation: RotationChart,
    pub depth_mode: DepthMode,
}

impl SupervisionVariant {
    pub fn new(target: TrajTarget) -> Self {
        SupervisionVariant { target, rotation: RotationChart::AxisAngle, depth_mode: DepthMode::Metric }
    }

    pub fn validate(&self) -> DatasetResult<()> {
        if self.rotation != RotationChart::AxisAngle && !self.target.is_se3() {
            return Err(DatasetError::Config(format!(
                "rotation chart {:?} only applies to SE(3) targets, not {:?}",
                self.rotation, self.target
            )));
        }
        Ok(())
    }

    /// Per-step target dimension.
    pub fn target_dim(&self) -> usize {
        match self.target {
            TrajTarget::NoTraj => 0,
            TrajTarget::Traj2D => 2,
            TrajTarget::Traj3DPos => 3,
            TrajTarget::AuxTraj | TrajTarget::TrajWorldSE3 | TrajTarget::TrajCameraSE3 => {
                3 + self.rotation.dim()
            }
        }
    }

    pub fn label(&self) -> String {
        let base = match self.target {
            TrajTarget::NoTraj => "no_traj",
            TrajTarget::AuxTraj => "aux_traj",
            TrajTarget::Traj2D => "traj_2d",
            TrajTarget::Traj3DPos => "traj_3d_pos",
            TrajTarget::TrajWorldSE3 => "traj_world_se3",
            TrajTarget::TrajCameraSE3 => "traj_camera_se3",
        };
        let rot = match self.rotation {
            RotationChart::AxisAngle => "",
            RotationChart::Quaternion => "+quat",
            RotationChart::Euler => "+euler",
        };
        let depth = match self.depth_mode {
            DepthMode::Metric => "",
            DepthMode::Relative => "+relative_depth",
            DepthMode::None => "+no_depth",
        };
        format!("{base}{rot}{depth}")
    }
}

/// Row-major `horizon x dim` target block.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisionTarget {
    pub horizon: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl SupervisionTarget {
    pub fn row(&self, h: usize) -> &[f64] {
        &self.values[h * self.dim..(h + 1) * self.dim]
    }
}

fn rotation_block(
    rot: &crate::geometry::RotationMatrix,
    chart: RotationChart,
    step: usize,
) -> DatasetResult<Vec<f64>> {
    let r = Rotation::from_matrix(rot, chart).map_err(|e| match e {
        GeometryError::DegenerateChart { pitch } => {
            DatasetError::ChartViolation { step, detail: format!("Euler pitch {pitch} at gimbal lock") }
        }
        other => other.into(),
    })?;
    if let Rotation::AxisAngle(a) = r {
        if a.angle() >= CHART_LIMIT {
            return Err(DatasetError::ChartViolation {
                step,
                detail: format!("axis-angle magnitude {}", a.angle()),
            });
        }
    }
    Ok(r.to_vec())
}

/// Builds the variant's target block from a window. Positions are multiplied
/// by `position_scale`.
pub fn make_supervision(
    window: &TrainingWindow,
    variant: &SupervisionVariant,
    cam: &CameraModel,
    position_scale: f64,
) -> DatasetResult<SupervisionTarget> {
    variant.validate()?;
    let horizon = window.horizon();
    let dim = variant.target_dim();
    let mut values = Vec::with_capacity(horizon * dim);
    for (h, world) in window.target_poses_world.iter().enumerate() {
        let cam_pose = crate::geometry::world_to_camera(world, &cam.extrinsic);
        match variant.target {
            TrajTarget::NoTraj => {}
            TrajTarget::Traj2D => {
                let proj = project_pinhole(&cam_pose.translation, &cam.intrinsic)?;
                values.push(proj.uv[0] / cam.intrinsic.width);
                values.push(proj.uv[1] / cam.intrinsic.height);
            }
            TrajTarget::Traj3DPos => {
                values.extend(cam_pose.translation.iter().map(|v| v * position_scale));
            }
            TrajTarget::AuxTraj | TrajTarget::TrajCameraSE3 => {
                values.extend(cam_pose.translation.iter().map(|v| v * position_scale));
                values.extend(rotation_block(&cam_pose.rotation, variant.rotation, h)?);
            }
            TrajTarget::TrajWorldSE3 => {
                values.extend(world.translation.iter().map(|v| v * position_scale));
                values.extend(rotation_block(&world.rotation, variant.rotation, h)?);
            }
        }
    }
    Ok(SupervisionTarget { horizon, dim, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::record::{record_demonstrations, RecordConfig};
    use crate::datasets::windows::make_windows;
    use crate::geometry::{se3_to_pose, world_to_camera};
    use crate::simworld::{ExpertConfig, NoiseConfig, SceneDocument, TaskFamily};

    fn windows() -> (Vec<TrainingWindow>, CameraModel) {
        let doc = SceneDocument::preset(TaskFamily::Goal);
        let cfg = RecordConfig {
            episodes: 2,
            seed: 5,
            expert: ExpertConfig::default(),
            noise: NoiseConfig::none(),
            depth_mode: DepthMode::Metric,
        };
        let set = record_demonstrations(&doc.scene, &doc.tasks[0], &cfg).unwrap();
        let w = set.demos.iter().flat_map(|d| make_windows(d, 8).unwrap()).collect();
        (w, set.header.camera)
    }

    #[test]
    fn camera_se3_is_readout_of_world_pose() {
        let (ws, cam) = windows();
        let v = SupervisionVariant::new(TrajTarget::TrajCameraSE3);
        for w in &ws {
            let s = make_supervision(w, &v, &cam, 1.0).unwrap();
            for (h, world) in w.target_poses_world.iter().enumerate() {
                let e = se3_to_pose(&world_to_camera(world, &cam.extrinsic)).unwrap();
                assert_eq!(s.row(h), &e.to_array());
            }
        }
    }

    #[test]
    fn two_d_is_projection_of_three_d() {
        let (ws, cam) = windows();
        let v2 = SupervisionVariant::new(TrajTarget::Traj2D);
        let v3 = SupervisionVariant::new(TrajTarget::Traj3DPos);
        for w in ws.iter().take(10) {
            let s2 = make_supervision(w, &v2, &cam, 1.0).unwrap();
            let s3 = make_supervision(w, &v3, &cam, 1.0).unwrap();
            for h in 0..8 {
                let p = nalgebra::Vector3::from_column_slice(s3.row(h));
                let uv = project_pinhole(&p, &cam.intrinsic).unwrap().uv;
                assert_eq!(s2.row(h), &[uv[0] / 224.0, uv[1] / 224.0]);
            }
        }
    }

    #[test]
    fn quaternion_targets_are_unit() {
        let (ws, cam) = windows();
        let v = SupervisionVariant { rotation: RotationChart::Quaternion, ..SupervisionVariant::new(TrajTarget::TrajCameraSE3) };
        for w in &ws {
            let s = make_supervision(w, &v, &cam, 1.0).unwrap();
            assert_eq!(s.dim, 7);
            for h in 0..8 {
                let q = &s.row(h)[3..];
                let n = q.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimensions_match_metadata_for_every_variant() {
        let (ws, cam) = windows();
        for target in TrajTarget::ALL {
            for rotation in RotationChart::ALL {
                let v = SupervisionVariant { target, rotation, depth_mode: DepthMode::Metric };
                match make_supervision(&ws[3], &v, &cam, 1.0) {
                    Ok(s) => {
                        assert_eq!(s.dim, v.target_dim());
                        assert_eq!(s.values.len(), 8 * v.target_dim());
                    }
                    Err(DatasetError::Config(_)) => assert!(!target.is_se3() && rotation != RotationChart::AxisAngle),
                    Err(e) => panic!("{e}"),
                }
            }
        }
    }

    #[test]
    fn pure_and_scaled() {
        let (ws, cam) = windows();
        let v = SupervisionVariant::new(TrajTarget::TrajWorldSE3);
        let a = make_supervision(&ws[0], &v, &cam, 1.0).unwrap();
        assert_eq!(a, make_supervision(&ws[0], &v, &cam, 1.0).unwrap());
        let b = make_supervision(&ws[0], &v, &cam, 10.0).unwrap();
        assert_eq!(b.row(0)[0], a.row(0)[0] * 10.0);
        assert_eq!(b.row(0)[3], a.row(0)[3]);
    }

    #[test]
    fn chart_violation_names_the_step() {
        let (mut ws, cam) = windows();
        let w = &mut ws[0];
        w.target_poses_world[5].rotation = crate::geometry::exp_so3(&crate::geometry::AxisAngle::new(0.0, 0.0, std::f64::consts::PI)).unwrap();
        let v = SupervisionVariant::new(TrajTarget::TrajWorldSE3);
        assert!(matches!(make_supervision(w, &v, &cam, 1.0), Err(DatasetError::ChartViolation { step: 5, .. })));
    }
}
