use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scene::{SceneSpec, TaskFamily, TaskSpec};
use super::sim::{check_success, NoiseConfig, SimState, GRIPPER_THRESHOLD, MAX_STEP_ROTATION, MAX_STEP_TRANSLATION};
use super::{SimError, SimResult};
use crate::geometry::{log_so3, AxisAngle, RelativeAction, RotationMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    /// Steps by which gripper commands lag the motion plan.
    pub gripper_latency_steps: usize,
    /// Height of the pre-grasp waypoint above the object, meters.
    pub approach_height: f64,
    /// Transport height of the end-effector above the object's resting height.
    pub carry_height: f64,
    /// Distance under which a waypoint counts as reached.
    pub arrive_tol: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        ExpertConfig { gripper_latency_steps: 1, approach_height: 0.08, carry_height: 0.10, arrive_tol: 1e-6 }
    }
}

impl ExpertConfig {
    /// Defaults with an arrival tolerance of two per-axis standard deviations
    /// of positional actuation noise, measured as a 3D distance.
    pub fn for_noise(noise: &NoiseConfig) -> Self {
        let d = Self::default();
        ExpertConfig { arrive_tol: d.arrive_tol.max(2.0 * 3f64.sqrt() * noise.sigma_p), ..d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExpertPhase {
    Latch,
    Approach,
    Descend,
    Close,
    /// Gripper closed on nothing: reopen before retrying.
    Reopen,
    Lift,
    Traverse,
    Lower,
    Open,
    Retreat,
    Done,
}

/// Waypoint controller. The phase is read off the state each call; the only
/// memory is the gripper-command delay line.
#[derive(Debug, Clone)]
pub struct ScriptedExpert {
    cfg: ExpertConfig,
    pending: VecDeque<f64>,
}

fn yaw_of(r: &RotationMatrix) -> f64 {
    let m = r.matrix();
    m[(1, 0)].atan2(m[(0, 0)])
}

fn horizontal(v: &Vector3<f64>) -> f64 {
    (v.x * v.x + v.y * v.y).sqrt()
}

impl ScriptedExpert {
    pub fn new(cfg: ExpertConfig) -> Self {
        ScriptedExpert { cfg, pending: VecDeque::from(vec![0.0; cfg.gripper_latency_steps]) }
    }

    /// Expert whose delay line is primed with `command`, for starting
    /// mid-episode.
    pub fn with_command(cfg: ExpertConfig, command: f64) -> Self {
        ScriptedExpert { cfg, pending: VecDeque::from(vec![command; cfg.gripper_latency_steps]) }
    }

    pub fn config(&self) -> &ExpertConfig {
        &self.cfg
    }

    pub fn phase(&self, state: &SimState, scene: &SceneSpec, task: &TaskSpec) -> SimResult<ExpertPhase> {
        let tol = self.cfg.arrive_tol;
        let ee = state.ee_pose.translation;
        let obj = state.object_position(&task.target_object)?;
        let spec = scene
            .object(&task.target_object)
            .ok_or_else(|| SimError::InvalidTask(task.target_object.clone()))?;
        let cont_spec = scene
            .container(&task.target_container)
            .ok_or_else(|| SimError::InvalidTask(task.target_container.clone()))?;
        let cont = Vector3::from(cont_spec.center);
        let carry_z = spec.position[2] + self.cfg.carry_height;

        if state.attached_id() == Some(task.target_object.as_str()) {
            // Dwell until fully closed so lifting never races the grasp.
            if state.gripper < 1.0 && horizontal(&(obj - cont)) > cont_spec.accept_radius {
                return Ok(ExpertPhase::Close);
            }
            let d = obj - cont;
            return Ok(if d.norm() <= tol {
                ExpertPhase::Open
            } else if horizontal(&d) <= tol || (ee.z < carry_z - tol && horizontal(&d) <= cont_spec.accept_radius) {
                // Once lowering, jitter must not send the arm back up.
                ExpertPhase::Lower
            } else if ee.z >= carry_z - tol {
                ExpertPhase::Traverse
            } else {
                ExpertPhase::Lift
            });
        }
        if state.attached.is_some() {
            return Ok(ExpertPhase::Open);
        }
        if check_success(state, task, scene) {
            return Ok(if ee.z >= carry_z - tol { ExpertPhase::Done } else { ExpertPhase::Retreat });
        }
        if state.gripper >= GRIPPER_THRESHOLD {
            return Ok(ExpertPhase::Reopen);
        }
        if task.family == TaskFamily::Long && !state.latch_visited {
            return Ok(ExpertPhase::Latch);
        }
        let yaw_err = (yaw_of(&state.ee_pose.rotation) - spec.grasp_yaw).abs();
        let near = (ee - obj).norm();
        if (near <= tol && yaw_err <= tol) || (state.gripper > 0.0 && near <= spec.grasp_radius) {
            return Ok(ExpertPhase::Close);
        }
        let pre_z = obj.z + self.cfg.approach_height;
        let h = horizontal(&(ee - obj));
        let descending = ee.z < pre_z - tol && h <= spec.grasp_radius;
        if (h <= tol && ee.z <= pre_z + tol && yaw_err <= tol) || descending {
            return Ok(ExpertPhase::Descend);
        }
        Ok(ExpertPhase::Approach)
    }

    /// Next action. Motion is straight-line toward the phase waypoint, limited
    /// to the simulator's per-step translation and rotation bounds.
    pub fn act(&mut self, state: &SimState, scene: &SceneSpec, task: &TaskSpec) -> SimResult<RelativeAction> {
        let phase = self.phase(state, scene, task)?;
        let pose = &state.ee_pose;
        let ee = pose.translation;
        let yaw = yaw_of(&pose.rotation);
        let obj = state.object_position(&task.target_object)?;
        let spec = scene.object(&task.target_object).expect("validated by phase");
        let cont_spec = scene.container(&task.target_container).expect("validated");
        let cont = Vector3::from(cont_spec.center);
        let place_yaw = cont_spec.place_yaw.unwrap_or(yaw);
        let carry_z = spec.position[2] + self.cfg.carry_height;
        let held_offset = state
            .attached
            .as_ref()
            .map(|a| pose.rotation.matrix() * a.offset)
            .unwrap_or_else(Vector3::zeros);

        let (target, target_yaw, grip) = match phase {
            ExpertPhase::Latch => {
                let latch = scene.latch.as_ref().ok_or_else(|| SimError::InvalidTask("missing latch".into()))?;
                (Vector3::from(latch.center), yaw, 0.0)
            }
            ExpertPhase::Approach => {
                (Vector3::new(obj.x, obj.y, obj.z + self.cfg.approach_height), spec.grasp_yaw, 0.0)
            }
            ExpertPhase::Descend => (obj, spec.grasp_yaw, 0.0),
            ExpertPhase::Close => (ee, yaw, 1.0),
            ExpertPhase::Reopen => (ee, yaw, 0.0),
            ExpertPhase::Lift => (Vector3::new(ee.x, ee.y, carry_z), yaw, 1.0),
            ExpertPhase::Traverse => {
                (Vector3::new(cont.x - held_offset.x, cont.y - held_offset.y, carry_z), place_yaw, 1.0)
            }
            ExpertPhase::Lower => (cont - held_offset, place_yaw, 1.0),
            ExpertPhase::Open => (ee, yaw, 0.0),
            ExpertPhase::Retreat => (Vector3::new(ee.x, ee.y, carry_z), yaw, 0.0),
            ExpertPhase::Done => (ee, yaw, 0.0),
        };
        if !scene.table_bounds.contains(&target) {
            return Err(SimError::ExpertFailure(format!("{phase:?} waypoint {target:?} outside table bounds")));
        }

        // One shared step fraction so rotation and translation arrive
        // together instead of the yaw saturating in the first steps.
        let goal_rot = RotationMatrix::from_yaw(target_yaw);
        let full_rot = log_so3(&pose.rotation.transpose().compose(&goal_rot))?.0;
        let full_delta = target - ee;
        let frac = [(full_delta.norm(), MAX_STEP_TRANSLATION), (full_rot.norm(), MAX_STEP_ROTATION)]
            .iter()
            .filter(|(n, _)| *n > 0.0)
            .fold(1.0_f64, |f, (n, cap)| f.min(cap / n));
        let delta = full_delta * frac;
        let dtheta = full_rot * frac;
        let dp = pose.rotation.matrix().transpose() * delta;

        self.pending.push_back(grip);
        let gripper = self.pending.pop_front().unwrap_or(grip);
        Ok(RelativeAction { dp, dtheta: AxisAngle(dtheta), gripper })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::scene::SceneDocument;
    use crate::simworld::sim::{NoiseConfig, Simulator};

    fn run(family: TaskFamily, seed: u64) -> (Simulator, Vec<ExpertPhase>) {
        let doc = SceneDocument::preset(family);
        let task = doc.tasks[0].clone();
        let mut sim = Simulator::new(&doc.scene, &task, seed, NoiseConfig::none()).unwrap();
        let mut expert = ScriptedExpert::new(ExpertConfig::default());
        let mut phases = Vec::new();
        while !sim.is_success() && !sim.is_terminated() {
            phases.push(expert.phase(sim.state(), &doc.scene, &task).unwrap());
            let a = expert.act(sim.state(), &doc.scene, &task).unwrap();
            sim.step(&a).unwrap();
        }
        (sim, phases)
    }

    #[test]
    fn descends_with_gripper_open_from_pregrasp() {
        let mut doc = SceneDocument::preset(TaskFamily::Goal);
        doc.scene.jitter_radius = 0.0;
        let task = doc.tasks[0].clone();
        let mut state = crate::simworld::sim::reset(&doc.scene, &task, 0).unwrap();
        let cube = state.object_positions["cube"];
        state.ee_pose = crate::geometry::SE3Transform::new(
            RotationMatrix::from_yaw(0.4),
            cube + Vector3::new(0.0, 0.0, 0.08),
        );
        let mut expert = ScriptedExpert::new(ExpertConfig::default());
        assert_eq!(expert.phase(&state, &doc.scene, &task).unwrap(), ExpertPhase::Descend);
        let a = expert.act(&state, &doc.scene, &task).unwrap();
        let world = state.ee_pose.rotation.matrix() * a.dp;
        assert!((world - Vector3::new(0.0, 0.0, -0.05)).norm() < 1e-12);
        assert_eq!(a.gripper, 0.0);
    }

    /// Traced by hand with latency 1: arrival over the bowl, then one step of
    /// delayed "closed", then "open", then the detach two steps later. The
    /// grasp side holds until the gripper is fully closed.
    #[test]
    fn opens_after_latency_above_container() {
        let (sim, phases) = run(TaskFamily::Goal, 0);
        assert!(sim.is_success());
        let first_open = phases.iter().position(|p| *p == ExpertPhase::Open).unwrap();
        assert_eq!(&phases[first_open..], &[ExpertPhase::Open; 3]);
        let first_close = phases.iter().position(|p| *p == ExpertPhase::Close).unwrap();
        // Delayed "open", first "closed" (attach at 0.5), dwell to 1.0.
        assert_eq!(&phases[first_close..first_close + 3], &[ExpertPhase::Close; 3]);
        assert_eq!(phases[first_close + 3], ExpertPhase::Lift);
    }

    #[test]
    fn open_command_waits_for_latency() {
        let mut doc = SceneDocument::preset(TaskFamily::Goal);
        doc.scene.jitter_radius = 0.0;
        let task = doc.tasks[0].clone();
        let mut sim = Simulator::new(&doc.scene, &task, 0, NoiseConfig::none()).unwrap();
        let mut expert = ScriptedExpert::new(ExpertConfig::default());
        let mut grips = Vec::new();
        while !sim.is_success() {
            let phase = expert.phase(sim.state(), &doc.scene, &task).unwrap();
            let a = expert.act(sim.state(), &doc.scene, &task).unwrap();
            grips.push((phase, a.gripper));
            sim.step(&a).unwrap();
        }
        let i = grips.iter().position(|(p, _)| *p == ExpertPhase::Open).unwrap();
        assert_eq!(grips[i].1, 1.0);
        assert_eq!(grips[i + 1].1, 0.0);
    }

    #[test]
    fn every_family_succeeds_noiselessly() {
        for family in TaskFamily::ALL {
            for seed in 0..10 {
                let (sim, phases) = run(family, seed);
                assert!(sim.is_success(), "{family:?} seed {seed}");
                assert!(sim.state().step_count <= 80, "{family:?} took {}", sim.state().step_count);
                if family == TaskFamily::Long {
                    assert_eq!(phases[0], ExpertPhase::Latch);
                }
            }
        }
    }

    #[test]
    fn unreachable_waypoint_fails() {
        let mut doc = SceneDocument::preset(TaskFamily::Goal);
        doc.scene.table_bounds.max[2] = 0.05;
        doc.scene.home.position[2] = 0.05;
        let task = doc.tasks[0].clone();
        let state = crate::simworld::sim::reset(&doc.scene, &task, 0).unwrap();
        let mut expert = ScriptedExpert::new(ExpertConfig::default());
        assert!(matches!(
            expert.act(&state, &doc.scene, &task),
            Err(SimError::ExpertFailure(_))
        ));
    }
}
