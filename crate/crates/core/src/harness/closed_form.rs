use std::collections::VecDeque;

use nalgebra::Vector3;

use super::rollout::{evaluate, require_axis_angle_se3, ChunkPlan, ChunkPolicy, EvalConfig, EvalReport, PredictionNoise};
use super::{HarnessError, HarnessResult};
use crate::datasets::{state_vector, TrajTarget};
use crate::geometry::{
    camera_to_world, relative_action, world_to_camera, AxisAngle, EulerAngles, Quaternion, RelativeAction,
    RotationChart, RotationMatrix, SE3Transform,
};
use crate::policy::{ForwardOptions, Policy};
use crate::simworld::{
    check_success, featurize, CameraModel, ExpertConfig, NoiseConfig, SceneSpec, ScriptedExpert, SimState,
    Simulator, TaskSpec, GRIPPER_THRESHOLD,
};

/// Where the closed-form pipeline gets its camera-frame trajectories.
pub enum TrajectorySource<'a> {
    /// A trained camera-frame SE(3) predictor, optionally corrupted.
    Learned { policy: &'a Policy, noise: Option<PredictionNoise> },
    /// The scripted expert rolled forward on a noiseless copy of the world.
    Oracle { expert: ExpertConfig, horizon: usize },
}

/// Hardcoded decoder: lifts predicted camera-frame poses to the world with
/// the known extrinsic, chains relative actions from the current pose, and
/// drives the gripper from privileged proximity signals delayed by
/// `latency` steps.
pub struct ClosedFormPolicy<'a> {
    source: TrajectorySource<'a>,
    camera: CameraModel,
    latency: usize,
    pending: VecDeque<f64>,
    episode_seed: u64,
}

fn row_to_pose(row: &[f64], chart: RotationChart, scale: f64) -> HarnessResult<SE3Transform> {
    let p = Vector3::new(row[0], row[1], row[2]) / scale;
    let r = &row[3..];
    let rot: RotationMatrix = match chart {
        RotationChart::AxisAngle => crate::geometry::exp_so3(&AxisAngle(Vector3::new(r[0], r[1], r[2])))?,
        RotationChart::Quaternion => Quaternion::new(r[0], r[1], r[2], r[3])?.to_rotation()?,
        RotationChart::Euler => EulerAngles { roll: r[0], pitch: r[1], yaw: r[2] }.to_rotation()?,
    };
    Ok(SE3Transform::new(rot, p))
}

/// Gripper command from simulator ground truth: close within the target's
/// grasp radius, open once the held target is within the container's accept
/// radius.
pub(crate) fn privileged_gripper(state: &SimState, scene: &SceneSpec, task: &TaskSpec) -> HarnessResult<f64> {
    let obj = state.object_position(&task.target_object)?;
    let spec = scene.object(&task.target_object).ok_or_else(|| HarnessError::Config("unknown target".into()))?;
    let cont = scene.container(&task.target_container).ok_or_else(|| HarnessError::Config("unknown container".into()))?;
    let g = match state.attached_id() {
        Some(id) if id == task.target_object => {
            if (obj - Vector3::from(cont.center)).norm() <= cont.accept_radius {
                0.0
            } else {
                1.0
            }
        }
        Some(_) => 0.0,
        None => {
            let near = (state.ee_pose.translation - obj).norm() <= spec.grasp_radius;
            if near && !check_success(state, task, scene) {
                1.0
            } else {
                0.0
            }
        }
    };
    Ok(g)
}

impl<'a> ClosedFormPolicy<'a> {
    pub fn new(source: TrajectorySource<'a>, camera: CameraModel, latency: usize) -> HarnessResult<Self> {
        match &source {
            TrajectorySource::Learned { policy, noise } => {
                let t = policy.config().variant.target;
                if !matches!(t, TrajTarget::TrajCameraSE3 | TrajTarget::AuxTraj) {
                    return Err(HarnessError::Config(format!(
                        "closed-form decoding needs a camera-frame SE(3) predictor, not {}",
                        policy.config().variant.label()
                    )));
                }
                if noise.is_some() {
                    require_axis_angle_se3(policy)?;
                }
            }
            TrajectorySource::Oracle { horizon, .. } if *horizon == 0 => {
                return Err(HarnessError::Config("oracle horizon must be >= 1".into()))
            }
            TrajectorySource::Oracle { .. } => {}
        }
        Ok(ClosedFormPolicy { source, camera, latency, pending: VecDeque::from(vec![0.0; latency]), episode_seed: 0 })
    }

    /// Camera-frame target poses for the next chunk.
    fn camera_poses(&self, sim: &Simulator, chunk: usize) -> HarnessResult<Vec<SE3Transform>> {
        match &self.source {
            TrajectorySource::Learned { policy, noise } => {
                let cfg = policy.config();
                let state = sim.state();
                let features = featurize(state, sim.task(), sim.scene(), &self.camera, cfg.variant.depth_mode)?;
                let step = policy.act(&features, &state_vector(state)?, &ForwardOptions::default())?;
                let mut tau = step.tau.ok_or_else(|| HarnessError::Config("predictor produced no trajectory".into()))?;
                if let Some(n) = noise {
                    let delta = n.sample(self.episode_seed, chunk, tau.len(), cfg.variant.target_dim(), cfg.position_scale);
                    for (row, d) in tau.iter_mut().zip(delta) {
                        row.iter_mut().zip(d).for_each(|(v, e)| *v += e);
                    }
                }
                tau.iter().map(|r| row_to_pose(r, cfg.variant.rotation, cfg.position_scale)).collect()
            }
            TrajectorySource::Oracle { expert, horizon } => {
                let state = sim.state().clone();
                let command = if state.gripper >= GRIPPER_THRESHOLD { 1.0 } else { 0.0 };
                let mut shadow = Simulator::from_state(sim.scene(), sim.task(), state, NoiseConfig::none());
                let mut exp = ScriptedExpert::with_command(*expert, command);
                let mut out = Vec::with_capacity(*horizon);
                for _ in 0..*horizon {
                    if !shadow.is_success() && !shadow.is_terminated() {
                        let a = exp.act(shadow.state(), sim.scene(), sim.task())?;
                        shadow.step(&a)?;
                    }
                    out.push(world_to_camera(&shadow.state().ee_pose, &self.camera.extrinsic));
                }
                Ok(out)
            }
        }
    }
}

impl ChunkPolicy for ClosedFormPolicy<'_> {
    fn begin_episode(&mut self, episode_seed: u64) {
        self.episode_seed = episode_seed;
        self.pending = VecDeque::from(vec![0.0; self.latency]);
    }

    fn plan(&mut self, sim: &Simulator, chunk: usize) -> HarnessResult<ChunkPlan> {
        let poses = self.camera_poses(sim, chunk)?;
        let world: Vec<SE3Transform> = poses.iter().map(|p| camera_to_world(p, &self.camera.extrinsic)).collect();
        let mut prev = sim.state().ee_pose;
        let mut actions = Vec::with_capacity(world.len());
        let mut violations = 0;
        for next in &world {
            let m = relative_action(&prev, next)?;
            violations += usize::from(m.chart_violation);
            actions.push(RelativeAction::from_motion(m, 0.0));
            prev = *next;
        }
        Ok(ChunkPlan {
            positions: Some(world.iter().map(|p| p.translation).collect()),
            predicted_rows: world.len(),
            chart_violations: violations,
            actions,
        })
    }

    fn gripper(&mut self, sim: &Simulator, _planned: f64) -> HarnessResult<f64> {
        let g = privileged_gripper(sim.state(), sim.scene(), sim.task())?;
        self.pending.push_back(g);
        Ok(self.pending.pop_front().unwrap_or(g))
    }
}

/// Evaluates the closed-form pipeline on the same episode seeds as
/// [`evaluate`] with a learned policy, so the two reports are paired.
pub fn closed_form_baseline(
    policy: &Policy,
    scene: &SceneSpec,
    task: &TaskSpec,
    latency: usize,
    noise: Option<PredictionNoise>,
    cfg: &EvalConfig,
) -> HarnessResult<EvalReport> {
    let mut cf = ClosedFormPolicy::new(TrajectorySource::Learned { policy, noise }, scene.camera, latency)?;
    evaluate(scene, task, &mut cf, cfg)
}
