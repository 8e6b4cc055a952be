use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{io_err, HarnessError, HarnessResult};
use crate::datasets::{make_supervision, make_windows, read_dataset, DemoSet, TrainingWindow};
use crate::policy::{build_variant, FeatureNormalizer, Policy, PolicyConfig, PolicyError, TrainBatch};
use crate::seeds::mix_seed;
use crate::simworld::FeatureLayout;
use crate::tensornet::{adamw_step, AdamWConfig, OptimizerState, Tape, TensorError};

pub const TRAIN_SCHEMA: &str = "train_cfg_v1";

fn schema() -> String {
    TRAIN_SCHEMA.to_string()
}

fn default_log_every() -> u64 {
    50
}

fn yes() -> bool {
    true
}

/// A `train_cfg_v1` document. The optimizer's cosine schedule always spans
/// `steps`; its `total_steps` field is overwritten.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "schema")]
    pub schema: String,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub policy: PolicyConfig,
    pub steps: u64,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub optimizer: AdamWConfig,
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    /// Standardize observation tokens, states and head outputs with
    /// statistics of the training set.
    #[serde(default = "yes")]
    pub normalize_features: bool,
}

impl TrainConfig {
    /// Desk-scale defaults around `policy`.
    pub fn desk(policy: PolicyConfig) -> Self {
        TrainConfig {
            schema: schema(),
            dataset: None,
            policy,
            steps: 4000,
            batch_size: 16,
            seeds: vec![0, 1, 2],
            optimizer: AdamWConfig {
                lr: 1e-3,
                weight_decay: 1e-4,
                warmup_steps: 200,
                total_steps: 4000,
                ..AdamWConfig::default()
            },
            log_every: default_log_every(),
            normalize_features: true,
        }
    }

    pub fn validate(&self) -> HarnessResult<()> {
        if self.schema != TRAIN_SCHEMA {
            return Err(HarnessError::Config(format!("unknown schema {:?}", self.schema)));
        }
        self.policy.validate()?;
        if self.steps > 0 && self.steps <= self.optimizer.warmup_steps {
            return Err(HarnessError::Config(format!(
                "steps ({}) must exceed warmup_steps ({})",
                self.steps, self.optimizer.warmup_steps
            )));
        }
        if self.batch_size == 0 {
            return Err(HarnessError::Config("batch_size must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        if self.log_every == 0 {
            return Err(HarnessError::Config("log_every must be >= 1".into()));
        }
        Ok(())
    }

    fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { total_steps: self.steps, ..self.optimizer }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub l_traj: Option<f64>,
    pub l_act: f64,
    pub l_total: f64,
    pub lr: f64,
}

/// A trained model and its per-step loss history.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub policy: Policy,
    pub history: Vec<LossRecord>,
    pub seed: u64,
}

fn write_curve(path: &Path, history: &[LossRecord], every: u64) -> HarnessResult<()> {
    let mut s = String::from("step,l_traj,l_act,l_total,lr\n");
    for r in history.iter().filter(|r| r.step % every == 0 || r.step == history.len() as u64) {
        let traj = r.l_traj.map(|v| format!("{v:.17e}")).unwrap_or_default();
        writeln!(s, "{},{traj},{:.17e},{:.17e},{:.17e}", r.step, r.l_act, r.l_total, r.lr).expect("string write");
    }
    std::fs::write(path, s).map_err(io_err(path))
}

fn is_numeric_fault(e: &PolicyError) -> Option<&'static str> {
    match e {
        PolicyError::Tensor(TensorError::NumericFault { op }) => Some(op),
        _ => None,
    }
}

/// Trains one replica on an in-memory dataset. With `out`, the final
/// checkpoint and `loss_curve.csv` are written there; on a numeric fault the
/// last good parameters are saved instead and the fault is returned.
pub fn train_on(set: &DemoSet, cfg: &TrainConfig, seed: u64, out: Option<&Path>) -> HarnessResult<TrainRun> {
    cfg.validate()?;
    let pcfg = PolicyConfig { seed: mix_seed(seed, 0), ..cfg.policy.clone() };
    let depth = pcfg.variant.depth_mode;
    if set.header.record.depth_mode != depth {
        return Err(HarnessError::Config(format!(
            "dataset depth mode {:?} does not match variant depth mode {depth:?}",
            set.header.record.depth_mode
        )));
    }
    let layout = FeatureLayout::for_scene(&set.header.scene, depth);
    let cam = set.header.camera;

    let mut windows: Vec<TrainingWindow> = Vec::new();
    for d in &set.demos {
        windows.extend(make_windows(d, pcfg.horizon)?);
    }
    if windows.is_empty() && cfg.steps > 0 {
        return Err(HarnessError::Config("dataset has no training windows".into()));
    }
    let normalizer = if cfg.normalize_features {
        let samples: Vec<_> = windows.iter().map(|w| (&w.features, &w.state)).collect();
        let dim = pcfg.variant.target_dim();
        let mut traj = Vec::new();
        let mut acts = Vec::new();
        for w in &windows {
            if dim > 0 {
                traj.extend(make_supervision(w, &pcfg.variant, &cam, pcfg.position_scale)?.values);
            }
            acts.extend(w.target_actions.iter().flat_map(|a| a.to_array()));
        }
        FeatureNormalizer::fit(&layout, &samples)?.with_targets(&traj, dim, &acts)
    } else {
        FeatureNormalizer::identity(&layout)
    };
    let mut policy = build_variant(&pcfg, &layout, normalizer)?;
    let mut opt = OptimizerState::new(cfg.optimizer(), policy.params());
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1));
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut cursor = order.len();
    let mut history = Vec::with_capacity(cfg.steps as usize);

    let fault = |policy: &Policy, step: u64, detail: String, history: &[LossRecord]| -> HarnessError {
        let checkpoint = out.and_then(|dir| {
            let saved = policy.save(dir, step.saturating_sub(1)).is_ok()
                && write_curve(&dir.join("loss_curve.csv"), history, cfg.log_every).is_ok();
            saved.then(|| dir.to_path_buf())
        });
        log::error!("numeric fault at step {step}: {detail}");
        HarnessError::NumericFault { step, detail, checkpoint }
    };

    for step in 1..=cfg.steps {
        let mut batch_idx = Vec::with_capacity(cfg.batch_size);
        while batch_idx.len() < cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch_idx.push(order[cursor]);
            cursor += 1;
        }
        let refs: Vec<&TrainingWindow> = batch_idx.iter().map(|&i| &windows[i]).collect();
        let batch = TrainBatch::from_windows(policy.config(), &layout, policy.normalizer(), &cam, &refs)?;
        let mut tape = Tape::new(pcfg.precision);
        let loss = match policy.loss(&mut tape, &batch) {
            Ok(l) => l,
            Err(e) => match is_numeric_fault(&e) {
                Some(op) => return Err(fault(&policy, step, format!("forward pass: non-finite output of {op}"), &history)),
                None => return Err(e.into()),
            },
        };
        let record = LossRecord {
            step,
            l_traj: loss.traj.map(|v| tape.value(v).item()),
            l_act: tape.value(loss.act).item(),
            l_total: tape.value(loss.total).item(),
            lr: 0.0,
        };
        let grads = match tape.backward(loss.total) {
            Ok(g) => g.params(policy.params()),
            Err(TensorError::NumericFault { op }) => {
                return Err(fault(&policy, step, format!("backward pass: non-finite gradient in {op}"), &history))
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(i) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
            let name = policy.params().iter().nth(i).map(|(_, p)| p.name.clone()).unwrap_or_default();
            return Err(fault(&policy, step, format!("non-finite gradient for {name}"), &history));
        }
        let lr = adamw_step(policy.params_mut(), &grads, &mut opt)?;
        if step % cfg.log_every == 0 {
            log::info!(
                "seed {seed} step {step}: L_total {:.5} L_act {:.5} L_traj {} lr {lr:.2e}",
                record.l_total,
                record.l_act,
                record.l_traj.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into())
            );
        }
        history.push(LossRecord { lr, ..record });
    }

    if let Some(dir) = out {
        policy.save(dir, cfg.steps)?;
        write_curve(&dir.join("loss_curve.csv"), &history, cfg.log_every)?;
    }
    Ok(TrainRun { policy, history, seed })
}

/// Trains every seed of `cfg` on the dataset file. A single seed writes its
/// checkpoint to `out`; several seeds write to `out/seed_<k>`.
pub fn train(cfg: &TrainConfig, dataset: &Path, out: &Path) -> HarnessResult<Vec<TrainRun>> {
    cfg.validate()?;
    let set = read_dataset(dataset)?;
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let dir = if cfg.seeds.len() == 1 { out.to_path_buf() } else { out.join(format!("seed_{seed}")) };
        runs.push(train_on(&set, cfg, seed, Some(&dir))?);
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{record_demonstrations, RecordConfig, SupervisionVariant, TrajTarget};
    use crate::simworld::{DepthMode, ExpertConfig, NoiseConfig, SceneDocument, TaskFamily};

    fn demos(n: usize) -> DemoSet {
        let doc = SceneDocument::preset(TaskFamily::Goal);
        let cfg = RecordConfig { episodes: n, seed: 9, expert: ExpertConfig::default(), noise: NoiseConfig::none(), depth_mode: DepthMode::Metric };
        record_demonstrations(&doc.scene, &doc.tasks[0], &cfg).unwrap()
    }

    fn tiny(steps: u64) -> TrainConfig {
        let mut c = TrainConfig::desk(PolicyConfig::tiny(SupervisionVariant::new(TrajTarget::TrajCameraSE3)));
        c.steps = steps;
        c.batch_size = 4;
        c.seeds = vec![5];
        c.optimizer.warmup_steps = 10.min(steps.saturating_sub(1));
        c
    }

    #[test]
    fn zero_steps_keeps_initialization() {
        let set = demos(1);
        let cfg = tiny(0);
        let run = train_on(&set, &cfg, 5, None).unwrap();
        let layout = FeatureLayout::for_scene(&set.header.scene, DepthMode::Metric);
        let init = build_variant(
            &PolicyConfig { seed: mix_seed(5, 0), ..cfg.policy.clone() },
            &layout,
            run.policy.normalizer().clone(),
        )
        .unwrap();
        assert_eq!(run.policy.params(), init.params());
        assert!(run.history.is_empty());
    }

    #[test]
    fn same_seed_same_parameters() {
        let set = demos(1);
        let a = train_on(&set, &tiny(12), 3, None).unwrap();
        let b = train_on(&set, &tiny(12), 3, None).unwrap();
        let c = train_on(&set, &tiny(12), 4, None).unwrap();
        assert_eq!(a.policy.params(), b.policy.params());
        assert_eq!(a.history, b.history);
        assert_ne!(a.policy.params(), c.policy.params());
    }

    #[test]
    fn writes_checkpoint_and_curve() {
        let set = demos(1);
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig { log_every: 5, ..tiny(12) };
        train_on(&set, &cfg, 1, Some(dir.path())).unwrap();
        let curve = std::fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
        let lines: Vec<_> = curve.lines().collect();
        assert_eq!(lines[0], "step,l_traj,l_act,l_total,lr");
        assert_eq!(lines.len(), 1 + 3);
        let (p, step) = Policy::load(dir.path()).unwrap();
        assert_eq!(step, 12);
        assert_eq!(p.config().horizon, 3);
    }

    #[test]
    fn numeric_fault_keeps_last_good_checkpoint() {
        let mut set = demos(1);
        let last = set.demos[0].steps.len() - 2;
        set.demos[0].steps[last].action.as_mut().unwrap().dp.x = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny(40);
        cfg.batch_size = 64;
        cfg.normalize_features = false;
        match train_on(&set, &cfg, 1, Some(dir.path())) {
            Err(HarnessError::NumericFault { step, checkpoint, .. }) => {
                assert_eq!(step, 1);
                assert_eq!(checkpoint.as_deref(), Some(dir.path()));
                let (p, saved_step) = Policy::load(dir.path()).unwrap();
                assert_eq!(saved_step, 0);
                assert!(p.params().iter().all(|(_, v)| v.value.is_finite()));
            }
            other => panic!("expected a numeric fault, got {other:?}"),
        }
    }

    #[test]
    fn rejects_short_schedules() {
        let mut c = tiny(100);
        c.optimizer.warmup_steps = 100;
        assert!(c.validate().is_err());
        c.seeds.clear();
        c.optimizer.warmup_steps = 1;
        assert!(c.validate().is_err());
    }
}
