use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::{SceneSpec, TaskFamily, TaskSpec};
use super::{SimError, SimResult};
use crate::geometry::{
    apply_action, relative_action, AxisAngle, RelativeAction, RotationMatrix, SE3Transform,
};
use crate::seeds::mix_seed;

pub const MAX_STEP_TRANSLATION: f64 = 0.05;
pub const MAX_STEP_ROTATION: f64 = 0.2;
pub const MAX_GRIPPER_RATE: f64 = 0.5;
pub const GRIPPER_THRESHOLD: f64 = 0.5;
const JITTER_ATTEMPTS: usize = 100;

/// Object held by the gripper and its position in the end-effector frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub id: String,
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub ee_pose: SE3Transform,
    pub gripper: f64,
    pub object_positions: BTreeMap<String, Vector3<f64>>,
    pub attached: Option<Attachment>,
    pub latch_visited: bool,
    pub step_count: usize,
}

impl SimState {
    pub fn object_position(&self, id: &str) -> SimResult<Vector3<f64>> {
        self.object_positions
            .get(id)
            .copied()
            .ok_or_else(|| SimError::InvalidTask(format!("unknown object {id}")))
    }

    pub fn attached_id(&self) -> Option<&str> {
        self.attached.as_ref().map(|a| a.id.as_str())
    }
}

/// Zero-mean Gaussian actuation noise, per axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_p: f64,
    pub sigma_theta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig::default()
    }

    pub fn is_active(&self) -> bool {
        self.sigma_p > 0.0 || self.sigma_theta > 0.0
    }
}

/// What happened during one [`Simulator::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Rigid motion actually executed (after noise and clamping) with the
    /// commanded gripper value.
    pub executed: RelativeAction,
    pub attached: bool,
    pub detached: bool,
}

/// Initial state for `(scene, task, seed)`; objects are jittered uniformly in
/// a horizontal disk of `scene.jitter_radius`.
pub fn reset(scene: &SceneSpec, task: &TaskSpec, seed: u64) -> SimResult<SimState> {
    scene.validate()?;
    task.validate(scene)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(scene.rng_seed, seed));
    let mut object_positions = BTreeMap::new();
    for o in &scene.objects {
        let base = Vector3::from(o.position);
        let mut placed = None;
        for _ in 0..JITTER_ATTEMPTS {
            let r = scene.jitter_radius * rng.random::<f64>().sqrt();
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let p = base + Vector3::new(r * phi.cos(), r * phi.sin(), 0.0);
            if scene.table_bounds.contains(&p) {
                placed = Some(p);
                break;
            }
        }
        let p = placed.ok_or_else(|| SimError::JitterExhausted(o.id.clone()))?;
        object_positions.insert(o.id.clone(), p);
    }
    Ok(SimState {
        ee_pose: SE3Transform::new(
            RotationMatrix::from_yaw(scene.home.yaw),
            Vector3::from(scene.home.position),
        ),
        gripper: 0.0,
        object_positions,
        attached: None,
        latch_visited: false,
        step_count: 0,
    })
}

/// Target released, resting within the container's accept radius, and (for
/// long tasks) the latch visited first.
pub fn check_success(state: &SimState, task: &TaskSpec, scene: &SceneSpec) -> bool {
    if state.attached_id() == Some(task.target_object.as_str()) {
        return false;
    }
    if task.family == TaskFamily::Long && !state.latch_visited {
        return false;
    }
    let (Some(obj), Some(cont)) = (
        state.object_positions.get(&task.target_object),
        scene.container(&task.target_container),
    ) else {
        return false;
    };
    (obj - Vector3::from(cont.center)).norm() <= cont.accept_radius
}

fn clamp_norm(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

/// One kinematic simulator instance. Owns its state and noise stream.
#[derive(Debug, Clone)]
pub struct Simulator {
    scene: SceneSpec,
    task: TaskSpec,
    state: SimState,
    noise: NoiseConfig,
    rng: ChaCha8Rng,
}

impl Simulator {
    pub fn new(scene: &SceneSpec, task: &TaskSpec, seed: u64, noise: NoiseConfig) -> SimResult<Self> {
        let state = reset(scene, task, seed)?;
        Ok(Simulator {
            scene: scene.clone(),
            task: task.clone(),
            state,
            noise,
            rng: ChaCha8Rng::seed_from_u64(mix_seed(noise.seed, seed)),
        })
    }

    pub fn from_state(scene: &SceneSpec, task: &TaskSpec, state: SimState, noise: NoiseConfig) -> Self {
        Simulator {
            scene: scene.clone(),
            task: task.clone(),
            rng: ChaCha8Rng::seed_from_u64(mix_seed(noise.seed, state.step_count as u64)),
            state,
            noise,
        }
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn scene(&self) -> &SceneSpec {
        &self.scene
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn is_success(&self) -> bool {
        check_success(&self.state, &self.task, &self.scene)
    }

    pub fn is_terminated(&self) -> bool {
        self.state.step_count >= self.task.horizon_limit
    }

    pub fn step(&mut self, action: &RelativeAction) -> SimResult<StepOutcome> {
        if self.is_terminated() {
            return Err(SimError::EpisodeTerminated { horizon: self.task.horizon_limit });
        }
        if !action.is_finite() {
            return Err(SimError::NonFiniteAction);
        }
        let mut dp = action.dp;
        let mut dtheta = action.dtheta.0;
        if self.noise.sigma_p > 0.0 {
            let n = Normal::new(0.0, self.noise.sigma_p).expect("sigma_p is positive");
            dp += Vector3::from_fn(|_, _| n.sample(&mut self.rng));
        }
        if self.noise.sigma_theta > 0.0 {
            let n = Normal::new(0.0, self.noise.sigma_theta).expect("sigma_theta is positive");
            dtheta += Vector3::from_fn(|_, _| n.sample(&mut self.rng));
        }
        let dp = clamp_norm(dp, MAX_STEP_TRANSLATION);
        let dtheta = AxisAngle(clamp_norm(dtheta, MAX_STEP_ROTATION));

        let old_pose = self.state.ee_pose;
        let moved = apply_action(&old_pose, &RelativeAction { dp, dtheta, gripper: 0.0 })?;
        let clamped = self.scene.table_bounds.clamp(&moved.translation);
        let new_pose = SE3Transform::new(moved.rotation, clamped);
        let executed_rigid = if clamped == moved.translation {
            RelativeAction { dp, dtheta, gripper: 0.0 }
        } else {
            RelativeAction::from_motion(relative_action(&old_pose, &new_pose)?, 0.0)
        };

        let command = action.gripper.clamp(0.0, 1.0);
        let old_g = self.state.gripper;
        let new_g = old_g + (command - old_g).clamp(-MAX_GRIPPER_RATE, MAX_GRIPPER_RATE);
        self.state.ee_pose = new_pose;
        self.state.gripper = new_g;

        let mut attached = false;
        let mut detached = false;
        if old_g < GRIPPER_THRESHOLD && new_g >= GRIPPER_THRESHOLD && self.state.attached.is_none() {
            let ee = new_pose.translation;
            let candidate = self
                .scene
                .objects
                .iter()
                .filter_map(|o| {
                    let d = (self.state.object_positions[&o.id] - ee).norm();
                    (d <= o.grasp_radius).then_some((d, o.id.clone()))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, id)) = candidate {
                let world = self.state.object_positions[&id];
                let offset = new_pose.rotation.matrix().transpose() * (world - ee);
                self.state.attached = Some(Attachment { id, offset });
                attached = true;
            }
        } else if old_g >= GRIPPER_THRESHOLD && new_g < GRIPPER_THRESHOLD {
            if let Some(att) = self.state.attached.take() {
                // Released objects settle straight down onto their resting height.
                let rest_z = self.scene.object(&att.id).map(|o| o.position[2]).unwrap_or(0.0);
                if let Some(p) = self.state.object_positions.get_mut(&att.id) {
                    p.z = rest_z;
                }
                detached = true;
            }
        }
        if let Some(att) = &self.state.attached {
            let p = new_pose.transform_point(&att.offset);
            self.state.object_positions.insert(att.id.clone(), p);
        }
        if let Some(latch) = &self.scene.latch {
            if (new_pose.translation - Vector3::from(latch.center)).norm() <= latch.radius {
                self.state.latch_visited = true;
            }
        }
        self.state.step_count += 1;
        Ok(StepOutcome {
            executed: RelativeAction { gripper: command, ..executed_rigid },
            attached,
            detached,
        })
    }
}
