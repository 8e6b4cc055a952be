use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::stats::{wilson_interval, WILSON_Z95};
use super::{HarnessError, HarnessResult};
use crate::datasets::{state_vector, TrajTarget};
use crate::geometry::{RelativeAction, RotationChart};
use crate::policy::{ForwardOptions, HTrajEdit, Policy};
use crate::seeds::mix_seed;
use crate::simworld::{
    featurize, CameraModel, ExpertConfig, NoiseConfig, ScriptedExpert, Simulator, GRIPPER_THRESHOLD,
    SceneSpec, TaskSpec,
};

/// How much of each predicted chunk is executed before re-planning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkMode {
    /// Execute every predicted step.
    Full,
    /// Execute the first `k` steps only.
    Receding(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub episodes: usize,
    pub seed: u64,
    /// Actuation noise during evaluation. Each episode derives its own stream.
    pub noise: NoiseConfig,
    pub chunk_mode: ChunkMode,
    #[serde(default)]
    pub keep_traces: bool,
}

impl EvalConfig {
    pub fn new(episodes: usize, seed: u64) -> Self {
        EvalConfig { episodes, seed, noise: NoiseConfig::none(), chunk_mode: ChunkMode::Full, keep_traces: false }
    }

    pub fn episode_seed(&self, i: usize) -> u64 {
        mix_seed(self.seed, i as u64)
    }
}

/// One planning result.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChunkPlan {
    pub actions: Vec<RelativeAction>,
    /// Predicted world-frame end-effector positions after each action, when
    /// the planner predicts positions.
    pub positions: Option<Vec<Vector3<f64>>>,
    pub predicted_rows: usize,
    pub chart_violations: usize,
}

/// Anything that maps the current simulator state to an action chunk.
pub trait ChunkPolicy {
    fn begin_episode(&mut self, _episode_seed: u64) {}

    fn plan(&mut self, sim: &Simulator, chunk_index: usize) -> HarnessResult<ChunkPlan>;

    /// Gripper command actually sent for a planned step; called once per
    /// executed step, before the step.
    fn gripper(&mut self, _sim: &Simulator, planned: f64) -> HarnessResult<f64> {
        Ok(planned)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub success: bool,
    pub steps: usize,
    pub chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: String,
    pub successes: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// Fraction of predicted axis-angle rows at or beyond pi.
    pub chart_violation_rate: f64,
    /// Mean distance, meters, between predicted and reached positions.
    pub mean_traj_error: Option<f64>,
    #[serde(default)]
    pub traces: Vec<EpisodeTrace>,
}

/// Closed-loop evaluation of `policy` over `cfg.episodes` seeded episodes.
pub fn evaluate(
    scene: &SceneSpec,
    task: &TaskSpec,
    policy: &mut dyn ChunkPolicy,
    cfg: &EvalConfig,
) -> HarnessResult<EvalReport> {
    if cfg.episodes == 0 {
        return Err(HarnessError::Config("evaluation needs at least one episode".into()));
    }
    if cfg.chunk_mode == ChunkMode::Receding(0) {
        return Err(HarnessError::Config("receding horizon must execute at least one step".into()));
    }
    let mut successes = 0;
    let mut traces = Vec::new();
    let (mut rows, mut violations) = (0usize, 0usize);
    let (mut err_sum, mut err_n) = (0.0, 0usize);
    for i in 0..cfg.episodes {
        let seed = cfg.episode_seed(i);
        let noise = NoiseConfig { seed: mix_seed(cfg.noise.seed, seed), ..cfg.noise };
        let mut sim = Simulator::new(scene, task, seed, noise)?;
        policy.begin_episode(seed);
        let mut chunks = 0;
        'episode: while !sim.is_success() && !sim.is_terminated() {
            let plan = policy.plan(&sim, chunks)?;
            chunks += 1;
            rows += plan.predicted_rows;
            violations += plan.chart_violations;
            if plan.actions.is_empty() {
                return Err(HarnessError::Config("policy returned an empty chunk".into()));
            }
            let n = match cfg.chunk_mode {
                ChunkMode::Full => plan.actions.len(),
                ChunkMode::Receding(k) => k.min(plan.actions.len()),
            };
            for (h, a) in plan.actions.iter().take(n).enumerate() {
                if sim.is_success() || sim.is_terminated() {
                    break 'episode;
                }
                let g = policy.gripper(&sim, a.gripper)?;
                let cmd = RelativeAction { gripper: if g >= GRIPPER_THRESHOLD { 1.0 } else { 0.0 }, ..*a };
                sim.step(&cmd)?;
                if let Some(p) = plan.positions.as_ref().and_then(|p| p.get(h)) {
                    err_sum += (p - sim.state().ee_pose.translation).norm();
                    err_n += 1;
                }
            }
        }
        let success = sim.is_success();
        successes += usize::from(success);
        if cfg.keep_traces {
            traces.push(EpisodeTrace { seed, success, steps: sim.state().step_count, chunks });
        }
    }
    let (lo, hi) = wilson_interval(successes, cfg.episodes, WILSON_Z95)?;
    Ok(EvalReport {
        task: task.name.clone(),
        successes,
        episodes: cfg.episodes,
        success_rate: successes as f64 / cfg.episodes as f64,
        wilson_lo: lo,
        wilson_hi: hi,
        chart_violation_rate: if rows == 0 { 0.0 } else { violations as f64 / rows as f64 },
        mean_traj_error: (err_n > 0).then(|| err_sum / err_n as f64),
        traces,
    })
}

/// The scripted expert as a one-step-chunk policy.
#[derive(Debug, Clone)]
pub struct ExpertPolicy {
    cfg: ExpertConfig,
    expert: ScriptedExpert,
}

impl ExpertPolicy {
    pub fn new(cfg: ExpertConfig) -> Self {
        ExpertPolicy { cfg, expert: ScriptedExpert::new(cfg) }
    }
}

impl ChunkPolicy for ExpertPolicy {
    fn begin_episode(&mut self, _seed: u64) {
        self.expert = ScriptedExpert::new(self.cfg);
    }

    fn plan(&mut self, sim: &Simulator, _chunk: usize) -> HarnessResult<ChunkPlan> {
        let a = self.expert.act(sim.state(), sim.scene(), sim.task())?;
        Ok(ChunkPlan { actions: vec![a], ..ChunkPlan::default() })
    }
}

/// Gaussian corruption of predicted SE(3) trajectories: `sigma_p` meters on
/// positions and `sigma_theta` radians on axis-angle components, drawn
/// independently per horizon step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionNoise {
    pub sigma_p: f64,
    pub sigma_theta: f64,
    pub seed: u64,
}

impl PredictionNoise {
    /// Noise rows for one chunk, in the units of a `dim`-wide target whose
    /// positions are scaled by `position_scale`. Depends only on the seeds
    /// and indices, so paired evaluators draw identical corruption.
    pub fn sample(&self, episode_seed: u64, chunk: usize, rows: usize, dim: usize, position_scale: f64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(self.seed, episode_seed), chunk as u64));
        let np = Normal::new(0.0, self.sigma_p * position_scale).expect("sigma_p >= 0");
        let nt = Normal::new(0.0, self.sigma_theta).expect("sigma_theta >= 0");
        (0..rows)
            .map(|_| {
                (0..dim)
                    .map(|c| match c {
                        0..=2 => np.sample(&mut rng),
                        3..=5 => nt.sample(&mut rng),
                        _ => 0.0,
                    })
                    .collect()
            })
            .collect()
    }
}

pub(crate) fn require_axis_angle_se3(policy: &Policy) -> HarnessResult<()> {
    let v = policy.config().variant;
    if !v.target.is_se3() || v.rotation != RotationChart::AxisAngle {
        return Err(HarnessError::Config(format!(
            "prediction noise needs an axis-angle SE(3) predictor, not {}",
            v.label()
        )));
    }
    Ok(())
}

/// World-frame positions decoded from predicted trajectory rows.
pub(crate) fn predicted_positions(policy: &Policy, cam: &CameraModel, tau: &[Vec<f64>]) -> Option<Vec<Vector3<f64>>> {
    let cfg = policy.config();
    let s = cfg.position_scale;
    let ext = &cam.extrinsic.t_cam_to_world;
    match cfg.variant.target {
        TrajTarget::NoTraj | TrajTarget::Traj2D => None,
        TrajTarget::TrajWorldSE3 => Some(tau.iter().map(|r| Vector3::new(r[0], r[1], r[2])).collect()),
        TrajTarget::Traj3DPos | TrajTarget::AuxTraj | TrajTarget::TrajCameraSE3 => {
            Some(tau.iter().map(|r| ext.transform_point(&(Vector3::new(r[0], r[1], r[2]) / s))).collect())
        }
    }
}

/// A trained model driving the simulator. With `noise`, predicted trajectories
/// are corrupted at the predictor output before the decoder reads them.
pub struct LearnedPolicy<'a> {
    pub policy: &'a Policy,
    pub camera: CameraModel,
    pub noise: Option<PredictionNoise>,
    episode_seed: u64,
}

impl<'a> LearnedPolicy<'a> {
    pub fn new(policy: &'a Policy, camera: CameraModel) -> Self {
        LearnedPolicy { policy, camera, noise: None, episode_seed: 0 }
    }

    pub fn with_noise(policy: &'a Policy, camera: CameraModel, noise: PredictionNoise) -> HarnessResult<Self> {
        require_axis_angle_se3(policy)?;
        Ok(LearnedPolicy { policy, camera, noise: Some(noise), episode_seed: 0 })
    }
}

impl ChunkPolicy for LearnedPolicy<'_> {
    fn begin_episode(&mut self, episode_seed: u64) {
        self.episode_seed = episode_seed;
    }

    fn plan(&mut self, sim: &Simulator, chunk: usize) -> HarnessResult<ChunkPlan> {
        let cfg = self.policy.config();
        let state = sim.state();
        let features = featurize(state, sim.task(), sim.scene(), &self.camera, cfg.variant.depth_mode)?;
        let sv = state_vector(state)?;
        let opts = match &self.noise {
            Some(n) => {
                let delta =
                    n.sample(self.episode_seed, chunk, cfg.horizon, cfg.variant.target_dim(), cfg.position_scale);
                ForwardOptions { h_traj: Some(HTrajEdit::Add(self.policy.hidden_offset_for(&delta)?)) }
            }
            None => ForwardOptions::default(),
        };
        let step = self.policy.act(&features, &sv, &opts)?;
        let positions = step.tau.as_ref().and_then(|t| predicted_positions(self.policy, &self.camera, t));
        Ok(ChunkPlan {
            predicted_rows: step.tau.as_ref().map_or(0, |t| t.len()),
            chart_violations: step.chart_violations,
            positions,
            actions: step.actions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::SupervisionVariant;
    use crate::policy::{build_variant, FeatureNormalizer, PolicyConfig};
    use crate::simworld::{DepthMode, FeatureLayout, SceneDocument, TaskFamily};

    #[test]
    fn expert_policy_always_succeeds() {
        for family in TaskFamily::ALL {
            let doc = SceneDocument::preset(family);
            let mut p = ExpertPolicy::new(ExpertConfig::default());
            let cfg = EvalConfig { keep_traces: true, ..EvalConfig::new(10, 3) };
            let r = evaluate(&doc.scene, &doc.tasks[0], &mut p, &cfg).unwrap();
            assert_eq!(r.successes, 10, "{family:?}");
            assert_eq!(r.wilson_hi, 1.0);
            assert!(r.traces.iter().all(|t| t.steps < 80));
        }
    }

    #[test]
    fn untrained_policy_fails() {
        let doc = SceneDocument::preset(TaskFamily::Goal);
        let layout = FeatureLayout::for_scene(&doc.scene, DepthMode::Metric);
        let cfg = PolicyConfig::tiny(SupervisionVariant::new(TrajTarget::TrajCameraSE3));
        let policy = build_variant(&cfg, &layout, FeatureNormalizer::identity(&layout)).unwrap();
        let mut lp = LearnedPolicy::new(&policy, doc.scene.camera);
        let r = evaluate(&doc.scene, &doc.tasks[0], &mut lp, &EvalConfig::new(5, 1)).unwrap();
        assert_eq!(r.successes, 0);
        assert!(r.mean_traj_error.unwrap() > 0.0);
    }

    #[test]
    fn prediction_noise_is_reproducible() {
        let n = PredictionNoise { sigma_p: 0.005, sigma_theta: 0.03, seed: 4 };
        let a = n.sample(10, 2, 8, 6, 1.0);
        assert_eq!(a, n.sample(10, 2, 8, 6, 1.0));
        assert_ne!(a, n.sample(10, 3, 8, 6, 1.0));
        let all: Vec<f64> = a.iter().flat_map(|r| r[..3].to_vec()).collect();
        assert!(all.iter().all(|v| v.abs() < 0.05));
    }
}
