use serde::{Deserialize, Serialize};

use super::{DatasetError, DatasetResult, ACTION_CONSISTENCY_TOL, CAMERA_CONSISTENCY_TOL};
use crate::geometry::{apply_action, log_so3, world_to_camera, RelativeAction, SE3Transform};
use crate::provenance::config_hash;
use crate::seeds::mix_seed;
use crate::simworld::{
    featurize, CameraModel, DepthMode, ExpertConfig, NoiseConfig, ObservationFeatures, SceneSpec,
    ScriptedExpert, SimState, Simulator, TaskSpec,
};

/// One recorded timestep. The last timestep of an episode is terminal and
/// carries no action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestep {
    pub features: ObservationFeatures,
    pub ee_pose_world: SE3Transform,
    pub ee_pose_cam: SE3Transform,
    /// `[p, θ, gripper]` in the world frame.
    pub state: [f64; 7],
    /// Executed rigid motion with the commanded gripper value.
    pub action: Option<RelativeAction>,
    pub gripper_cmd: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub episode_seed: u64,
    pub steps: Vec<Timestep>,
}

impl Demonstration {
    /// Number of recorded states, including the terminal one.
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Checks the camera readout and action-recovery invariants at every step.
    pub fn check_invariants(&self, camera: &CameraModel) -> DatasetResult<()> {
        for (t, step) in self.steps.iter().enumerate() {
            let cam = world_to_camera(&step.ee_pose_world, &camera.extrinsic);
            let err = (cam.to_homogeneous() - step.ee_pose_cam.to_homogeneous()).abs().max();
            if err > CAMERA_CONSISTENCY_TOL {
                return Err(DatasetError::Invariant { t, detail: format!("camera readout off by {err:.3e}") });
            }
            match (&step.action, self.steps.get(t + 1)) {
                (Some(a), Some(next)) => {
                    let reached = apply_action(&step.ee_pose_world, a)?;
                    let err = (reached.to_homogeneous() - next.ee_pose_world.to_homogeneous()).abs().max();
                    if err > ACTION_CONSISTENCY_TOL {
                        return Err(DatasetError::Invariant { t, detail: format!("action recovery off by {err:.3e}") });
                    }
                }
                (None, None) => {}
                (Some(_), None) => {
                    return Err(DatasetError::Invariant { t, detail: "terminal step carries an action".into() })
                }
                (None, Some(_)) => {
                    return Err(DatasetError::Invariant { t, detail: "non-terminal step without action".into() })
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordConfig {
    pub episodes: usize,
    pub seed: u64,
    pub expert: ExpertConfig,
    pub noise: NoiseConfig,
    pub depth_mode: DepthMode,
}

/// Line 1 of a `demos_v1` file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub scene: SceneSpec,
    pub task: TaskSpec,
    pub camera: CameraModel,
    pub record: RecordConfig,
    pub episode_seeds: Vec<u64>,
    pub discarded_episodes: usize,
    pub timesteps: usize,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub header: DatasetHeader,
    pub demos: Vec<Demonstration>,
}

/// `[p, θ, gripper]` state vector with the world-frame axis-angle orientation.
pub fn state_vector(state: &SimState) -> DatasetResult<[f64; 7]> {
    let p = state.ee_pose.translation;
    let th = log_so3(&state.ee_pose.rotation)?.0;
    Ok([p.x, p.y, p.z, th.x, th.y, th.z, state.gripper])
}

fn timestep(sim: &Simulator, camera: &CameraModel, depth_mode: DepthMode) -> DatasetResult<Timestep> {
    let state = sim.state();
    Ok(Timestep {
        features: featurize(state, sim.task(), sim.scene(), camera, depth_mode)?,
        ee_pose_world: state.ee_pose,
        ee_pose_cam: world_to_camera(&state.ee_pose, &camera.extrinsic),
        state: state_vector(state)?,
        action: None,
        gripper_cmd: None,
    })
}

fn run_episode(
    scene: &SceneSpec,
    task: &TaskSpec,
    episode_seed: u64,
    cfg: &RecordConfig,
) -> DatasetResult<Option<Demonstration>> {
    let camera = scene.camera;
    let noise = NoiseConfig { seed: mix_seed(cfg.noise.seed, episode_seed), ..cfg.noise };
    let mut sim = Simulator::new(scene, task, episode_seed, noise)?;
    let mut expert = ScriptedExpert::new(cfg.expert);
    let mut steps = Vec::new();
    while !sim.is_success() {
        if sim.is_terminated() {
            return Ok(None);
        }
        let mut record = timestep(&sim, &camera, cfg.depth_mode)?;
        let command = match expert.act(sim.state(), scene, task) {
            Ok(a) => a,
            Err(crate::simworld::SimError::ExpertFailure(msg)) => {
                log::debug!("expert failure on episode seed {episode_seed}: {msg}");
                return Ok(None);
            }
            Err(e) => return Err(e.into()),
        };
        let outcome = sim.step(&command)?;
        record.action = Some(outcome.executed);
        record.gripper_cmd = Some(command.gripper);
        steps.push(record);
    }
    steps.push(timestep(&sim, &camera, cfg.depth_mode)?);
    Ok(Some(Demonstration { episode_seed, steps }))
}

/// Records `cfg.episodes` successful expert episodes. Failed episodes are
/// discarded and re-seeded; more than 20% failures is a configuration error.
pub fn record_demonstrations(scene: &SceneSpec, task: &TaskSpec, cfg: &RecordConfig) -> DatasetResult<DemoSet> {
    scene.validate()?;
    task.validate(scene)?;
    let mut demos = Vec::with_capacity(cfg.episodes);
    let mut discarded = 0usize;
    let mut attempt = 0u64;
    while demos.len() < cfg.episodes {
        let episode_seed = mix_seed(cfg.seed, attempt);
        attempt += 1;
        match run_episode(scene, task, episode_seed, cfg)? {
            Some(d) => demos.push(d),
            None => discarded += 1,
        }
        if 4 * discarded > cfg.episodes.max(1) {
            return Err(DatasetError::Config(format!(
                "expert failed {discarded} of {attempt} episodes (more than 20%)"
            )));
        }
    }
    if discarded > 0 {
        log::info!("discarded {discarded} failed expert episodes");
    }
    let header = DatasetHeader {
        schema: super::DEMOS_SCHEMA.to_string(),
        scene: scene.clone(),
        task: task.clone(),
        camera: scene.camera,
        record: cfg.clone(),
        episode_seeds: demos.iter().map(|d| d.episode_seed).collect(),
        discarded_episodes: discarded,
        timesteps: demos.iter().map(|d| d.len()).sum(),
        config_hash: config_hash(&(scene, task, cfg)),
    };
    Ok(DemoSet { header, demos })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simworld::{check_success, SceneDocument, TaskFamily};

    fn cfg(n: usize) -> RecordConfig {
        RecordConfig {
            episodes: n,
            seed: 3,
            expert: ExpertConfig::default(),
            noise: NoiseConfig::none(),
            depth_mode: DepthMode::Metric,
        }
    }

    #[test]
    fn single_noiseless_episode_succeeds() {
        let doc = SceneDocument::preset(TaskFamily::Goal);
        let set = record_demonstrations(&doc.scene, &doc.tasks[0], &cfg(1)).unwrap();
        assert_eq!(set.demos.len(), 1);
        let demo = &set.demos[0];
        // Replay the recorded actions and check the final state.
        let mut sim = Simulator::new(&doc.scene, &doc.tasks[0], demo.episode_seed, NoiseConfig::none()).unwrap();
        for s in &demo.steps[..demo.len() - 1] {
            sim.step(s.action.as_ref().unwrap()).unwrap();
        }
        assert!(check_success(sim.state(), &doc.tasks[0], &doc.scene));
        assert_eq!(sim.state().ee_pose, demo.steps.last().unwrap().ee_pose_world);
    }

    #[test]
    fn invariants_hold_for_every_step() {
        for family in TaskFamily::ALL {
            let doc = SceneDocument::preset(family);
            let set = record_demonstrations(&doc.scene, &doc.tasks[0], &cfg(10)).unwrap();
            assert_eq!(set.header.discarded_episodes, 0);
            for d in &set.demos {
                d.check_invariants(&set.header.camera).unwrap();
            }
        }
    }

    #[test]
    fn excessive_failures_are_a_config_error() {
        let mut doc = SceneDocument::preset(TaskFamily::Goal);
        doc.tasks[0].horizon_limit = 5;
        let e = record_demonstrations(&doc.scene, &doc.tasks[0], &cfg(4)).unwrap_err();
        assert!(matches!(e, DatasetError::Config(_)));
    }

    #[test]
    fn broken_invariant_is_reported() {
        let doc = SceneDocument::preset(TaskFamily::Goal);
        let mut set = record_demonstrations(&doc.scene, &doc.tasks[0], &cfg(1)).unwrap();
        set.demos[0].steps[2].action.as_mut().unwrap().dp.x += 1e-6;
        assert!(matches!(
            set.demos[0].check_invariants(&set.header.camera),
            Err(DatasetError::Invariant { t: 2, .. })
        ));
    }
}
