use serde::{Deserialize, Serialize};

use super::config::PolicyConfig;
use super::{PolicyError, PolicyResult};
use crate::datasets::{make_supervision, TrainingWindow};
use crate::simworld::{CameraModel, FeatureLayout, ObservationFeatures};
use crate::tensornet::Tensor;

/// Fixed affine standardization of observation token values and the state
/// vector, fitted per token slot and column on training data, plus the output
/// scales of the trajectory and motion heads. Empty output vectors mean
/// unit scale and zero offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub token_mean: Vec<Vec<f64>>,
    pub token_std: Vec<Vec<f64>>,
    pub state_mean: [f64; 7],
    pub state_std: [f64; 7],
    #[serde(default)]
    pub traj_mean: Vec<f64>,
    #[serde(default)]
    pub traj_std: Vec<f64>,
    /// Over the six rigid-motion columns; the gripper keeps its sigmoid.
    #[serde(default)]
    pub motion_mean: Vec<f64>,
    #[serde(default)]
    pub motion_std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-6;
/// Continuous columns of visual and depth tokens; the rest are indicators.
const VALUE_COLS: usize = 3;

fn mean_std(samples: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = samples.clone().count().max(1) as f64;
    let mean = samples.clone().sum::<f64>() / n;
    let var = samples.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std < STD_FLOOR { 1.0 } else { std })
}

impl FeatureNormalizer {
    pub fn identity(layout: &FeatureLayout) -> Self {
        let n = layout.n_tokens();
        FeatureNormalizer {
            token_mean: vec![vec![0.0; layout.token_dim]; n],
            token_std: vec![vec![1.0; layout.token_dim]; n],
            state_mean: [0.0; 7],
            state_std: [1.0; 7],
            traj_mean: Vec::new(),
            traj_std: Vec::new(),
            motion_mean: Vec::new(),
            motion_std: Vec::new(),
        }
    }

    /// Fits the output scales from flattened `dim`-wide trajectory rows and
    /// 7-wide action rows.
    pub fn with_targets(mut self, traj: &[f64], dim: usize, actions: &[f64]) -> Self {
        let fit = |data: &[f64], width: usize, cols: usize| -> (Vec<f64>, Vec<f64>) {
            (0..cols).map(|c| mean_std(data.chunks_exact(width).map(move |r| r[c]))).unzip()
        };
        if dim > 0 && !traj.is_empty() {
            (self.traj_mean, self.traj_std) = fit(traj, dim, dim);
        }
        if !actions.is_empty() {
            (self.motion_mean, self.motion_std) = fit(actions, 7, 6);
        }
        self
    }

    pub fn fit(layout: &FeatureLayout, samples: &[(&ObservationFeatures, &[f64; 7])]) -> PolicyResult<Self> {
        if samples.is_empty() {
            return Ok(Self::identity(layout));
        }
        let n = layout.n_tokens();
        let mut out = Self::identity(layout);
        // Only the leading value columns are standardized; slot indicators
        // stay raw so each embedding keeps a per-slot offset that survives
        // the layer norm ahead of attention.
        for slot in layout.n_language..n {
            for c in 0..VALUE_COLS.min(layout.token_dim) {
                let it = samples.iter().map(move |(f, _)| f.tokens().nth(slot).expect("slot")[c]);
                let (m, s) = mean_std(it);
                out.token_mean[slot][c] = m;
                out.token_std[slot][c] = s;
            }
        }
        for c in 0..7 {
            let (m, s) = mean_std(samples.iter().map(move |(_, st)| st[c]));
            out.state_mean[c] = m;
            out.state_std[c] = s;
        }
        Ok(out)
    }
}

/// One forward batch: token blocks stacked along rows, `batch` groups each.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyInput {
    pub batch: usize,
    pub language: Tensor,
    pub visual: Tensor,
    pub depth: Option<Tensor>,
    pub state: Tensor,
}

impl PolicyInput {
    pub fn from_observations(
        layout: &FeatureLayout,
        norm: &FeatureNormalizer,
        obs: &[(&ObservationFeatures, &[f64; 7])],
    ) -> PolicyResult<Self> {
        let b = obs.len();
        if b == 0 {
            return Err(PolicyError::Config("empty batch".into()));
        }
        let d = layout.token_dim;
        let mut lang = Vec::with_capacity(b * layout.n_language * d);
        let mut vis = Vec::with_capacity(b * layout.n_visual * d);
        let mut dep = Vec::with_capacity(b * layout.n_depth * d);
        let mut state = Vec::with_capacity(b * 7);
        for (f, s) in obs {
            if f.layout != *layout {
                return Err(PolicyError::Config(format!("feature layout {:?} does not match model {:?}", f.layout, layout)));
            }
            for (slot, tok) in f.tokens().enumerate() {
                let dst = if slot < layout.n_language {
                    &mut lang
                } else if slot < layout.n_language + layout.n_visual {
                    &mut vis
                } else {
                    &mut dep
                };
                for c in 0..d {
                    dst.push((tok[c] - norm.token_mean[slot][c]) / norm.token_std[slot][c]);
                }
            }
            for c in 0..7 {
                state.push((s[c] - norm.state_mean[c]) / norm.state_std[c]);
            }
        }
        Ok(PolicyInput {
            batch: b,
            language: Tensor::matrix(b * layout.n_language, d, lang)?,
            visual: Tensor::matrix(b * layout.n_visual, d, vis)?,
            depth: if layout.n_depth > 0 { Some(Tensor::matrix(b * layout.n_depth, d, dep)?) } else { None },
            state: Tensor::matrix(b, 7, state)?,
        })
    }
}

/// Inputs with trajectory and action targets, `batch * horizon` target rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub input: PolicyInput,
    pub traj_target: Option<Tensor>,
    pub action_target: Tensor,
}

impl TrainBatch {
    pub fn from_windows(
        cfg: &PolicyConfig,
        layout: &FeatureLayout,
        norm: &FeatureNormalizer,
        cam: &CameraModel,
        windows: &[&TrainingWindow],
    ) -> PolicyResult<Self> {
        let h = cfg.horizon;
        let obs: Vec<_> = windows.iter().map(|w| (&w.features, &w.state)).collect();
        let input = PolicyInput::from_observations(layout, norm, &obs)?;
        let dim = cfg.variant.target_dim();
        let mut traj = Vec::with_capacity(windows.len() * h * dim);
        let mut act = Vec::with_capacity(windows.len() * h * 7);
        for w in windows {
            if w.horizon() != h {
                return Err(PolicyError::Config(format!("window horizon {} != model horizon {h}", w.horizon())));
            }
            if dim > 0 {
                let s = make_supervision(w, &cfg.variant, cam, cfg.position_scale)?;
                traj.extend_from_slice(&s.values);
            }
            for a in &w.target_actions {
                act.extend_from_slice(&a.to_array());
            }
        }
        let rows = windows.len() * h;
        Ok(TrainBatch {
            input,
            traj_target: if dim > 0 { Some(Tensor::matrix(rows, dim, traj)?) } else { None },
            action_target: Tensor::matrix(rows, 7, act)?,
        })
    }
}
