use super::record::Demonstration;
use super::{DatasetError, DatasetResult};
use crate::geometry::{se3_to_pose, PoseVec, RelativeAction, SE3Transform, CHART_LIMIT};
use crate::simworld::ObservationFeatures;

/// Horizon-`H` supervision slice starting at timestep `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingWindow {
    pub t: usize,
    pub features: ObservationFeatures,
    pub state: [f64; 7],
    pub current_pose_world: SE3Transform,
    /// `T_{t+h}` for `h = 1..=H`.
    pub target_poses_world: Vec<SE3Transform>,
    /// Camera-frame targets `e^c_{t+h}`.
    pub target_poses_cam: Vec<PoseVec>,
    /// `(a_{t+h-1}, g_{t+h-1})` for `h = 1..=H`.
    pub target_actions: Vec<RelativeAction>,
    /// True where step `h` lies past the end of the episode and was padded.
    pub padded: Vec<bool>,
}

impl TrainingWindow {
    pub fn horizon(&self) -> usize {
        self.target_actions.len()
    }

    pub fn is_padded(&self) -> bool {
        self.padded.iter().any(|p| *p)
    }
}

/// One window per recorded timestep. Steps beyond the terminal state repeat
/// the final pose with a zero rigid action and the last gripper command held.
pub fn make_windows(demo: &Demonstration, horizon: usize) -> DatasetResult<Vec<TrainingWindow>> {
    if horizon == 0 {
        return Err(DatasetError::Config("horizon must be >= 1".into()));
    }
    let n_states = demo.len();
    if n_states < 2 {
        return Ok(Vec::new());
    }
    let last = n_states - 1;
    let held_gripper = demo.steps[last - 1]
        .gripper_cmd
        .ok_or_else(|| DatasetError::Invariant { t: last - 1, detail: "missing gripper command".into() })?;

    let mut windows = Vec::with_capacity(n_states);
    for t in 0..n_states {
        let mut poses_world = Vec::with_capacity(horizon);
        let mut poses_cam = Vec::with_capacity(horizon);
        let mut actions = Vec::with_capacity(horizon);
        let mut padded = Vec::with_capacity(horizon);
        for h in 1..=horizon {
            let idx = t + h;
            let pad = idx > last;
            let src = &demo.steps[idx.min(last)];
            poses_world.push(src.ee_pose_world);
            let cam = se3_to_pose(&src.ee_pose_cam)?;
            if cam.theta.angle() >= CHART_LIMIT {
                return Err(DatasetError::ChartViolation {
                    step: h - 1,
                    detail: format!("camera-frame rotation angle {} at t={t}", cam.theta.angle()),
                });
            }
            poses_cam.push(cam);
            let a_idx = t + h - 1;
            let action = if a_idx < last {
                demo.steps[a_idx]
                    .action
                    .ok_or_else(|| DatasetError::Invariant { t: a_idx, detail: "missing action".into() })?
            } else {
                RelativeAction::zero(held_gripper)
            };
            actions.push(action);
            padded.push(pad);
        }
        let step = &demo.steps[t];
        windows.push(TrainingWindow {
            t,
            features: step.features.clone(),
            state: step.state,
            current_pose_world: step.ee_pose_world,
            target_poses_world: poses_world,
            target_poses_cam: poses_cam,
            target_actions: actions,
            padded,
        });
    }
    Ok(windows)
}
