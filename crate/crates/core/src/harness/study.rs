use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::closed_form::{ClosedFormPolicy, TrajectorySource};
use super::rollout::{evaluate, EvalConfig, EvalReport, LearnedPolicy, PredictionNoise};
use super::train::{train_on, TrainConfig};
use super::{HarnessError, HarnessResult};
use crate::datasets::{record_demonstrations, DemoSet, RecordConfig, SupervisionVariant, TrajTarget};
use crate::geometry::RotationChart;
use crate::policy::{Policy, PolicyConfig};
use crate::provenance::config_hash;
use crate::seeds::mix_seed;
use crate::simworld::{DepthMode, ExpertConfig, NoiseConfig, SceneDocument};

pub const STUDY_SCHEMA: &str = "study_spec_v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Ladder,
    Rotation,
    Depth,
    Scaling,
    ClosedForm,
}

/// Which decoder turns a cell's model output into actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decoder {
    #[default]
    Learned,
    /// Hardcoded pipeline over the learned camera-frame predictor.
    ClosedForm,
    /// Hardcoded pipeline over expert trajectories; trains nothing.
    Oracle,
}

fn camera_se3() -> TrajTarget {
    TrajTarget::TrajCameraSE3
}

fn axis_angle() -> RotationChart {
    RotationChart::AxisAngle
}

fn metric() -> DepthMode {
    DepthMode::Metric
}

/// One grid point. Unset fields take the study-wide defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StudyCell {
    #[serde(default = "camera_se3")]
    pub target: TrajTarget,
    #[serde(default = "axis_angle")]
    pub rotation: RotationChart,
    #[serde(default = "metric")]
    pub depth_mode: DepthMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demos: Option<usize>,
    #[serde(default)]
    pub decoder: Decoder,
}

impl StudyCell {
    pub fn new(target: TrajTarget) -> Self {
        StudyCell { target, rotation: axis_angle(), depth_mode: metric(), demos: None, decoder: Decoder::Learned }
    }

    pub fn variant(&self) -> SupervisionVariant {
        SupervisionVariant { target: self.target, rotation: self.rotation, depth_mode: self.depth_mode }
    }

    pub fn label(&self) -> String {
        let mut s = self.variant().label();
        if let Some(n) = self.demos {
            s.push_str(&format!("@{n}demos"));
        }
        match self.decoder {
            Decoder::Learned => {}
            Decoder::ClosedForm => s.push_str("/closed_form"),
            Decoder::Oracle => s = "oracle/closed_form".into(),
        }
        s
    }

    /// The default grid of a study kind.
    pub fn standard_grid(kind: StudyKind) -> Vec<StudyCell> {
        let cam = StudyCell::new(TrajTarget::TrajCameraSE3);
        match kind {
            StudyKind::Ladder => TrajTarget::ALL.iter().map(|&t| StudyCell::new(t)).collect(),
            StudyKind::Rotation => [RotationChart::AxisAngle, RotationChart::Quaternion, RotationChart::Euler]
                .iter()
                .map(|&rotation| StudyCell { rotation, ..cam })
                .collect(),
            StudyKind::Depth => DepthMode::ALL.iter().map(|&depth_mode| StudyCell { depth_mode, ..cam }).collect(),
            StudyKind::Scaling => [10, 25, 50].iter().map(|&n| StudyCell { demos: Some(n), ..cam }).collect(),
            StudyKind::ClosedForm => vec![
                cam,
                StudyCell { decoder: Decoder::ClosedForm, ..cam },
                StudyCell { decoder: Decoder::Oracle, ..cam },
            ],
        }
    }
}

fn schema() -> String {
    STUDY_SCHEMA.to_string()
}

fn goal() -> String {
    "goal".into()
}

fn fifty() -> usize {
    50
}

fn default_steps() -> u64 {
    4000
}

fn default_data_seed() -> u64 {
    100
}

fn default_eval_seed() -> u64 {
    4242
}

/// A `study_spec_v1` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    #[serde(default = "schema")]
    pub schema: String,
    pub kind: StudyKind,
    /// Preset name or path of a scene document.
    #[serde(default = "goal")]
    pub scene: String,
    /// Task name; the document's first task when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    /// Explicit cells; the kind's standard grid when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<StudyCell>>,
    pub seeds: Vec<u64>,
    #[serde(default = "fifty")]
    pub episodes: usize,
    #[serde(default = "fifty")]
    pub demos: usize,
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    #[serde(default = "default_eval_seed")]
    pub eval_seed: u64,
    #[serde(default = "default_steps")]
    pub steps: u64,
    /// Base model config; each cell overrides the variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicyConfig>,
    /// Actuation noise for demonstrations and evaluation.
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Corruption of predicted trajectories, shared by paired decoders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PredictionNoise>,
    /// Gripper latency, in steps, of the hardcoded pipeline.
    #[serde(default)]
    pub latency: usize,
}

impl StudySpec {
    pub fn new(kind: StudyKind, seeds: Vec<u64>) -> Self {
        StudySpec {
            schema: schema(),
            kind,
            scene: goal(),
            task: None,
            grid: None,
            seeds,
            episodes: fifty(),
            demos: fifty(),
            data_seed: default_data_seed(),
            eval_seed: default_eval_seed(),
            steps: default_steps(),
            policy: None,
            noise: NoiseConfig::none(),
            perturbation: None,
            latency: 0,
        }
    }

    pub fn cells(&self) -> Vec<StudyCell> {
        self.grid.clone().unwrap_or_else(|| StudyCell::standard_grid(self.kind))
    }

    pub fn validate(&self) -> HarnessResult<()> {
        if self.schema != STUDY_SCHEMA {
            return Err(HarnessError::Config(format!("unknown schema {:?}", self.schema)));
        }
        if self.grid.as_ref().is_some_and(|g| g.is_empty()) {
            return Err(HarnessError::Config("study grid is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("study needs at least one seed".into()));
        }
        if self.episodes == 0 {
            return Err(HarnessError::Config("study needs at least one episode per cell".into()));
        }
        if self.cells().iter().any(|c| c.demos.unwrap_or(self.demos) == 0) {
            return Err(HarnessError::Config("cells need at least one demonstration".into()));
        }
        self.train_config(&StudyCell::new(TrajTarget::TrajCameraSE3)).validate()
    }

    fn train_config(&self, cell: &StudyCell) -> TrainConfig {
        let base = self.policy.clone().unwrap_or_else(|| PolicyConfig::desk(cell.variant()));
        let mut cfg = TrainConfig::desk(PolicyConfig { variant: cell.variant(), ..base });
        cfg.steps = self.steps;
        cfg.optimizer.warmup_steps = cfg.optimizer.warmup_steps.min(self.steps / 10);
        cfg.seeds = self.seeds.clone();
        cfg
    }

    fn record_config(&self, cell: &StudyCell) -> RecordConfig {
        RecordConfig {
            episodes: cell.demos.unwrap_or(self.demos),
            seed: self.data_seed,
            expert: ExpertConfig::for_noise(&self.noise),
            noise: self.noise,
            depth_mode: cell.depth_mode,
        }
    }

    fn eval_config(&self) -> EvalConfig {
        EvalConfig { noise: NoiseConfig { seed: mix_seed(self.noise.seed, 1), ..self.noise }, ..EvalConfig::new(self.episodes, self.eval_seed) }
    }
}

/// One cell-seed result. Failed cells carry `error` and zero counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub cell: String,
    pub seed: u64,
    pub successes: usize,
    pub episodes: usize,
    pub success_rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub chart_violation_rate: f64,
    pub mean_traj_error: Option<f64>,
    pub config_hash: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyTable {
    pub kind: StudyKind,
    pub spec_hash: String,
    /// Cell labels in grid order.
    pub cells: Vec<String>,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    /// Mean success rate over a cell's completed seeds.
    pub fn cell_mean(&self, cell: &str) -> Option<f64> {
        let rates: Vec<f64> =
            self.rows.iter().filter(|r| r.cell == cell && r.error.is_none()).map(|r| r.success_rate).collect();
        (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
    }
}

#[derive(Default)]
struct Caches {
    data: HashMap<String, DemoSet>,
    models: HashMap<String, Policy>,
}

fn run_cell(
    spec: &StudySpec,
    doc: &SceneDocument,
    cell: &StudyCell,
    seed: u64,
    caches: &mut Caches,
) -> HarnessResult<EvalReport> {
    let task = match &spec.task {
        Some(name) => doc.task(name)?,
        None => doc.tasks.first().ok_or_else(|| HarnessError::Config("scene document has no tasks".into()))?,
    };
    let eval = spec.eval_config();
    let tcfg = spec.train_config(cell);
    if cell.decoder == Decoder::Oracle {
        let src = TrajectorySource::Oracle { expert: ExpertConfig::default(), horizon: tcfg.policy.horizon };
        let mut cf = ClosedFormPolicy::new(src, doc.scene.camera, spec.latency)?;
        return evaluate(&doc.scene, task, &mut cf, &eval);
    }

    let rcfg = spec.record_config(cell);
    let data_key = config_hash(&(&doc.scene, task, &rcfg));
    if !caches.data.contains_key(&data_key) {
        let set = record_demonstrations(&doc.scene, task, &rcfg)?;
        caches.data.insert(data_key.clone(), set);
    }
    let model_key = config_hash(&(&data_key, &tcfg, seed));
    if !caches.models.contains_key(&model_key) {
        let run = train_on(&caches.data[&data_key], &tcfg, seed, None)?;
        caches.models.insert(model_key.clone(), run.policy);
    }
    let policy = &caches.models[&model_key];
    match cell.decoder {
        Decoder::Learned => {
            let mut lp = match spec.perturbation {
                Some(n) => LearnedPolicy::with_noise(policy, doc.scene.camera, n)?,
                None => LearnedPolicy::new(policy, doc.scene.camera),
            };
            evaluate(&doc.scene, task, &mut lp, &eval)
        }
        Decoder::ClosedForm => {
            let src = TrajectorySource::Learned { policy, noise: spec.perturbation };
            let mut cf = ClosedFormPolicy::new(src, doc.scene.camera, spec.latency)?;
            evaluate(&doc.scene, task, &mut cf, &eval)
        }
        Decoder::Oracle => unreachable!("handled above"),
    }
}

/// Trains and evaluates every cell for every seed. Demonstrations are
/// recorded once per data configuration and models are shared between cells
/// that differ only in decoder. A failing cell-seed becomes a row with an
/// error and the study moves on.
pub fn run_study(spec: &StudySpec) -> HarnessResult<StudyTable> {
    spec.validate()?;
    let doc = SceneDocument::resolve(&spec.scene)?;
    let cells = spec.cells();
    let mut caches = Caches::default();
    let mut rows = Vec::with_capacity(cells.len() * spec.seeds.len());
    for cell in &cells {
        let label = cell.label();
        for &seed in &spec.seeds {
            let hash = config_hash(&(spec.train_config(cell), spec.record_config(cell), spec.eval_config(), cell, seed));
            log::info!("study cell {label} seed {seed}");
            let row = match run_cell(spec, &doc, cell, seed, &mut caches) {
                Ok(r) => StudyRow {
                    cell: label.clone(),
                    seed,
                    successes: r.successes,
                    episodes: r.episodes,
                    success_rate: r.success_rate,
                    wilson_lo: r.wilson_lo,
                    wilson_hi: r.wilson_hi,
                    chart_violation_rate: r.chart_violation_rate,
                    mean_traj_error: r.mean_traj_error,
                    config_hash: hash,
                    error: None,
                },
                Err(e) => {
                    log::warn!("cell {label} seed {seed} failed: {e}");
                    StudyRow {
                        cell: label.clone(),
                        seed,
                        successes: 0,
                        episodes: 0,
                        success_rate: 0.0,
                        wilson_lo: 0.0,
                        wilson_hi: 0.0,
                        chart_violation_rate: 0.0,
                        mean_traj_error: None,
                        config_hash: hash,
                        error: Some(e.to_string()),
                    }
                }
            };
            rows.push(row);
        }
    }
    Ok(StudyTable {
        kind: spec.kind,
        spec_hash: config_hash(spec),
        cells: cells.iter().map(StudyCell::label).collect(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(kind: StudyKind) -> StudySpec {
        StudySpec {
            episodes: 1,
            demos: 1,
            steps: 2,
            policy: Some(PolicyConfig::tiny(SupervisionVariant::new(TrajTarget::NoTraj))),
            ..StudySpec::new(kind, vec![0, 1])
        }
    }

    #[test]
    fn standard_grids_have_expected_sizes() {
        assert_eq!(StudyCell::standard_grid(StudyKind::Ladder).len(), 6);
        for k in [StudyKind::Rotation, StudyKind::Depth, StudyKind::Scaling, StudyKind::ClosedForm] {
            assert_eq!(StudyCell::standard_grid(k).len(), 3);
        }
        let labels: Vec<_> = StudyCell::standard_grid(StudyKind::Ladder).iter().map(StudyCell::label).collect();
        let mut dedup = labels.clone();
        dedup.dedup();
        assert_eq!(labels, dedup);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let spec = StudySpec { grid: Some(vec![]), ..quick(StudyKind::Ladder) };
        assert!(matches!(run_study(&spec), Err(HarnessError::Config(_))));
    }

    #[test]
    fn one_cell_one_row_per_seed() {
        let spec = StudySpec { grid: Some(vec![StudyCell::new(TrajTarget::TrajCameraSE3)]), ..quick(StudyKind::Ladder) };
        let t = run_study(&spec).unwrap();
        assert_eq!(t.rows.len(), 2);
        assert!(t.rows.iter().all(|r| r.error.is_none() && r.episodes == 1));
        assert_eq!(t.cells, vec!["traj_camera_se3".to_string()]);
    }

    #[test]
    fn failing_cell_is_recorded_and_study_continues() {
        // A rotation chart on a non-SE(3) target cannot be built.
        let bad = StudyCell { rotation: RotationChart::Euler, ..StudyCell::new(TrajTarget::Traj2D) };
        let spec = StudySpec { grid: Some(vec![bad, StudyCell::new(TrajTarget::NoTraj)]), ..quick(StudyKind::Ladder) };
        let t = run_study(&spec).unwrap();
        assert_eq!(t.rows.len(), 4);
        assert!(t.rows[..2].iter().all(|r| r.error.is_some()));
        assert!(t.rows[2..].iter().all(|r| r.error.is_none()));
        assert_eq!(t.cell_mean(&t.cells[0]), None);
    }

    #[test]
    fn spec_json_defaults() {
        let spec: StudySpec = serde_json::from_str(r#"{"kind": "scaling", "seeds": [3]}"#).unwrap();
        assert_eq!(spec.cells().len(), 3);
        assert_eq!(spec.episodes, 50);
        let back: StudySpec = serde_json::from_str(&serde_json::to_string(&spec).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
