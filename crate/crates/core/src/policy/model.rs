use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::batch::{FeatureNormalizer, PolicyInput, TrainBatch};
use super::config::PolicyConfig;
use super::losses::{action_and_total_loss, trajectory_loss, LossOutput};
use super::{PolicyError, PolicyResult};
use crate::datasets::TrajTarget;
use crate::geometry::{RelativeAction, RotationChart};
use crate::provenance::config_hash;
use crate::simworld::{FeatureLayout, ObservationFeatures};
use crate::tensornet::{
    load_checkpoint, save_checkpoint, FeedForward, InitScheme, LayerNorm, Linear, MultiHeadAttention, ParamId,
    ParamSet, Tape, Tensor, Var,
};

/// `x * std + mean` per column; a no-op for empty statistics.
fn denormalize(tape: &mut Tape, x: Var, mean: &[f64], std: &[f64]) -> PolicyResult<Var> {
    if std.is_empty() {
        return Ok(x);
    }
    let rows = tape.value(x).rows();
    let scale = Tensor::matrix(rows, std.len(), std.iter().copied().cycle().take(rows * std.len()).collect())?;
    let scale = tape.constant(scale)?;
    let offset = tape.constant(Tensor::matrix(1, mean.len(), mean.to_vec())?)?;
    let y = tape.mul(x, scale)?;
    Ok(tape.add_row(y, offset)?)
}

/// Multiplies each column by `1 / std`, so an l1 between two scaled tensors
/// is measured in standardized units. Columns past `std.len()` keep unit
/// scale.
fn standardize(tape: &mut Tape, x: Var, std: &[f64]) -> PolicyResult<Var> {
    if std.is_empty() {
        return Ok(x);
    }
    let (rows, cols) = (tape.value(x).rows(), tape.value(x).cols());
    let inv: Vec<f64> = (0..cols).map(|c| std.get(c).map_or(1.0, |s| 1.0 / s)).collect();
    let scale = Tensor::matrix(rows, cols, inv.iter().copied().cycle().take(rows * cols).collect())?;
    let scale = tape.constant(scale)?;
    Ok(tape.mul(x, scale)?)
}

/// Pre-norm block: self-attention with rotary positions, cross-attention to a
/// context sequence, feed-forward; each with a residual connection.
#[derive(Debug, Clone)]
struct Block {
    ln_self: LayerNorm,
    self_attn: MultiHeadAttention,
    ln_query: LayerNorm,
    ln_ctx: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

impl Block {
    fn new(ps: &mut ParamSet, name: &str, cfg: &PolicyConfig) -> PolicyResult<Self> {
        let d = cfg.d_model;
        Ok(Block {
            ln_self: LayerNorm::new(ps, &format!("{name}.ln_self"), d)?,
            self_attn: MultiHeadAttention::new(ps, &format!("{name}.self"), d, cfg.heads)?,
            ln_query: LayerNorm::new(ps, &format!("{name}.ln_query"), d)?,
            ln_ctx: LayerNorm::new(ps, &format!("{name}.ln_ctx"), d)?,
            cross_attn: MultiHeadAttention::new(ps, &format!("{name}.cross"), d, cfg.heads)?,
            ln_ffn: LayerNorm::new(ps, &format!("{name}.ln_ffn"), d)?,
            ffn: FeedForward::new(ps, &format!("{name}.ffn"), d, d * cfg.ffn_mult)?,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn forward(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        x: Var,
        ctx: Var,
        lq: usize,
        lk: usize,
        positions: &[f64],
        ctx_positions: Option<&[f64]>,
        base: f64,
    ) -> PolicyResult<Var> {
        let h = self.ln_self.forward(tape, ps, x)?;
        let sa = self.self_attn.forward(tape, ps, h, h, lq, lq, Some((positions, positions, base)))?;
        let x = tape.add(x, sa)?;
        let hq = self.ln_query.forward(tape, ps, x)?;
        let kv = self.ln_ctx.forward(tape, ps, ctx)?;
        let cross_rope = ctx_positions.map(|k| (positions, k, base));
        let ca = self.cross_attn.forward(tape, ps, hq, kv, lq, lk, cross_rope)?;
        let x = tape.add(x, ca)?;
        let hf = self.ln_ffn.forward(tape, ps, x)?;
        let ff = self.ffn.forward(tape, ps, hf)?;
        Ok(tape.add(x, ff)?)
    }
}

#[derive(Debug, Clone)]
struct Encoder {
    language: Linear,
    visual: Linear,
    depth: Option<Linear>,
}

#[derive(Debug, Clone)]
struct QueryStack {
    queries: ParamId,
    blocks: Vec<Block>,
    ln_out: LayerNorm,
    head: Linear,
}

impl QueryStack {
    fn new(ps: &mut ParamSet, name: &str, cfg: &PolicyConfig, n_blocks: usize, out_dim: usize) -> PolicyResult<Self> {
        let queries = ps.add(&format!("{name}.queries"), cfg.horizon, cfg.d_model, InitScheme::Normal { std: 0.02 })?;
        let blocks =
            (0..n_blocks).map(|i| Block::new(ps, &format!("{name}.block{i}"), cfg)).collect::<PolicyResult<_>>()?;
        Ok(QueryStack {
            queries,
            blocks,
            ln_out: LayerNorm::new(ps, &format!("{name}.ln_out"), cfg.d_model)?,
            head: Linear::new(ps, &format!("{name}.head"), cfg.d_model, out_dim, true)?,
        })
    }

    /// Returns the final normalized hidden states. `ctx_positions` (one
    /// sample's worth) enables rotary positions in cross-attention.
    #[allow(clippy::too_many_arguments)]
    fn hidden(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        cfg: &PolicyConfig,
        batch: usize,
        ctx: Var,
        lk: usize,
        ctx_positions: Option<&[f64]>,
    ) -> PolicyResult<Var> {
        let h = cfg.horizon;
        let q = tape.param(ps, self.queries)?;
        let mut x = tape.tile_rows(q, batch)?;
        let positions: Vec<f64> = (0..batch).flat_map(|_| (1..=h).map(|p| p as f64)).collect();
        let kpos: Option<Vec<f64>> = ctx_positions.map(|k| (0..batch).flat_map(|_| k.iter().copied()).collect());
        for b in &self.blocks {
            x = b.forward(tape, ps, x, ctx, h, lk, &positions, kpos.as_deref(), cfg.rope_base)?;
        }
        Ok(self.ln_out.forward(tape, ps, x)?)
    }
}

/// Post-hoc edit of the predictor hidden states, used by routing probes and
/// the perturbed-predictor protocol.
#[derive(Debug, Clone, PartialEq)]
pub enum HTrajEdit {
    Replace(Tensor),
    Add(Tensor),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ForwardOptions {
    pub h_traj: Option<HTrajEdit>,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardOutput {
    pub h3d: Var,
    pub h_state: Var,
    pub h_traj: Option<Var>,
    pub tau: Option<Var>,
    /// Decoder context `[conditioning stream, h_state]` per sample.
    pub ctx: Var,
    /// `batch * horizon` rows of `[dp, dtheta, gripper]`.
    pub actions: Var,
}

/// Single-observation inference result.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyStep {
    pub actions: Vec<RelativeAction>,
    /// Predicted trajectory rows in the variant's target space.
    pub tau: Option<Vec<Vec<f64>>>,
    pub h_traj: Option<Tensor>,
    /// Predicted axis-angle rows with magnitude at or beyond pi.
    pub chart_violations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    policy: PolicyConfig,
    layout: FeatureLayout,
    normalizer: FeatureNormalizer,
}

#[derive(Debug, Clone)]
pub struct Policy {
    cfg: PolicyConfig,
    layout: FeatureLayout,
    normalizer: FeatureNormalizer,
    params: ParamSet,
    encoder: Encoder,
    state_proj: Linear,
    predictor: Option<QueryStack>,
    decoder: QueryStack,
}

/// Builds the model for `cfg.variant`.
pub fn build_variant(cfg: &PolicyConfig, layout: &FeatureLayout, normalizer: FeatureNormalizer) -> PolicyResult<Policy> {
    cfg.validate()?;
    if normalizer.token_mean.len() != layout.n_tokens() {
        return Err(PolicyError::Config("normalizer does not match the feature layout".into()));
    }
    let mut ps = ParamSet::new(cfg.seed);
    let d = cfg.d_model;
    let td = layout.token_dim;
    let encoder = Encoder {
        language: Linear::new(&mut ps, "encoder.language", td, d, true)?,
        visual: Linear::new(&mut ps, "encoder.visual", td, d, true)?,
        depth: if layout.n_depth > 0 { Some(Linear::new(&mut ps, "encoder.depth", td, d, true)?) } else { None },
    };
    let state_proj = Linear::new(&mut ps, "state_proj", 7, d, true)?;
    let predictor = match cfg.variant.target {
        TrajTarget::NoTraj => None,
        _ => Some(QueryStack::new(&mut ps, "predictor", cfg, cfg.predictor_blocks, cfg.variant.target_dim())?),
    };
    let decoder = QueryStack::new(&mut ps, "decoder", cfg, cfg.decoder_blocks, 7)?;
    Ok(Policy { cfg: cfg.clone(), layout: *layout, normalizer, params: ps, encoder, state_proj, predictor, decoder })
}

impl Policy {
    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &FeatureLayout {
        &self.layout
    }

    pub fn normalizer(&self) -> &FeatureNormalizer {
        &self.normalizer
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn has_predictor(&self) -> bool {
        self.predictor.is_some()
    }

    pub fn config_hash(&self) -> String {
        config_hash(&(&self.cfg, &self.layout))
    }

    pub fn decoder_head(&self) -> Linear {
        self.decoder.head
    }

    pub fn trajectory_head(&self) -> Option<Linear> {
        self.predictor.as_ref().map(|p| p.head)
    }

    /// Projected observation tokens `h3d`, `batch * n_tokens` rows.
    pub fn encode(&self, tape: &mut Tape, ps: &ParamSet, input: &PolicyInput) -> PolicyResult<Var> {
        let l = self.layout;
        let b = input.batch;
        let lang_in = tape.constant(input.language.clone())?;
        let lang = self.encoder.language.forward(tape, ps, lang_in)?;
        let vis_in = tape.constant(input.visual.clone())?;
        let vis = self.encoder.visual.forward(tape, ps, vis_in)?;
        let mut parts = vec![(lang, l.n_language), (vis, l.n_visual)];
        match (&self.encoder.depth, &input.depth) {
            (Some(proj), Some(dep)) => {
                let dep_in = tape.constant(dep.clone())?;
                parts.push((proj.forward(tape, ps, dep_in)?, l.n_depth));
            }
            (None, None) => {}
            _ => return Err(PolicyError::Config("depth block presence differs between model and input".into())),
        }
        Ok(tape.concat_groups(&parts, b)?)
    }

    /// Full forward pass, reading parameters from `ps` (normally
    /// [`Policy::params`]; gradient checks pass perturbed copies).
    pub fn forward_with(
        &self,
        tape: &mut Tape,
        ps: &ParamSet,
        input: &PolicyInput,
        opts: &ForwardOptions,
    ) -> PolicyResult<ForwardOutput> {
        let b = input.batch;
        let h = self.cfg.horizon;
        let n_tok = self.layout.n_tokens();
        let h3d = self.encode(tape, ps, input)?;
        let state_in = tape.constant(input.state.clone())?;
        let h_state = self.state_proj.forward(tape, ps, state_in)?;

        let (mut h_traj, mut tau) = (None, None);
        if let Some(pred) = &self.predictor {
            let mut hid = pred.hidden(tape, ps, &self.cfg, b, h3d, n_tok, None)?;
            match &opts.h_traj {
                Some(HTrajEdit::Replace(t)) => hid = tape.constant(t.clone())?,
                Some(HTrajEdit::Add(t)) => {
                    let off = tape.constant(t.clone())?;
                    hid = tape.add(hid, off)?;
                }
                None => {}
            }
            let raw = pred.head.forward(tape, ps, hid)?;
            let mut out = denormalize(tape, raw, &self.normalizer.traj_mean, &self.normalizer.traj_std)?;
            if self.cfg.variant.target.is_se3() && self.cfg.variant.rotation == RotationChart::Quaternion {
                let p = tape.slice_cols(out, 0, 3)?;
                let q = tape.slice_cols(out, 3, 7)?;
                let q = tape.normalize_rows(q)?;
                out = tape.concat_cols(&[p, q])?;
            }
            h_traj = Some(hid);
            tau = Some(out);
        }

        // Trajectory keys sit at their horizon step and the state at step 0;
        // observation tokens carry no temporal order and also sit at 0.
        let (cond, lc, mut ctx_pos) = match (self.cfg.variant.target.decoder_reads_trajectory(), h_traj) {
            (true, Some(ht)) => (ht, h, (1..=h).map(|p| p as f64).collect::<Vec<_>>()),
            _ => (h3d, n_tok, vec![0.0; n_tok]),
        };
        ctx_pos.push(0.0);
        let ctx = tape.concat_groups(&[(cond, lc), (h_state, 1)], b)?;
        let hid = self.decoder.hidden(tape, ps, &self.cfg, b, ctx, lc + 1, Some(&ctx_pos))?;
        let raw = self.decoder.head.forward(tape, ps, hid)?;
        let motion = tape.slice_cols(raw, 0, 6)?;
        let motion = denormalize(tape, motion, &self.normalizer.motion_mean, &self.normalizer.motion_std)?;
        let grip = tape.slice_cols(raw, 6, 7)?;
        let grip = tape.sigmoid(grip)?;
        let actions = tape.concat_cols(&[motion, grip])?;
        Ok(ForwardOutput { h3d, h_state, h_traj, tau, ctx, actions })
    }

    pub fn forward(&self, tape: &mut Tape, input: &PolicyInput, opts: &ForwardOptions) -> PolicyResult<ForwardOutput> {
        self.forward_with(tape, &self.params, input, opts)
    }

    /// Trajectory, action and total losses on a batch.
    pub fn loss_with(&self, tape: &mut Tape, ps: &ParamSet, batch: &TrainBatch) -> PolicyResult<LossOutput> {
        let out = self.forward_with(tape, ps, &batch.input, &ForwardOptions::default())?;
        // Both losses compare outputs in the normalizer's standardized units
        // so no single column dominates the shared gradient.
        let norm = &self.normalizer;
        let traj = match (out.tau, &batch.traj_target) {
            (Some(tau), Some(t)) => {
                let target = tape.constant(t.clone())?;
                let (tau, target) = (standardize(tape, tau, &norm.traj_std)?, standardize(tape, target, &norm.traj_std)?);
                Some(trajectory_loss(tape, tau, target)?)
            }
            (None, None) => None,
            _ => return Err(PolicyError::Config("trajectory targets do not match the variant".into())),
        };
        let target = tape.constant(batch.action_target.clone())?;
        let pred = standardize(tape, out.actions, &norm.motion_std)?;
        let target = standardize(tape, target, &norm.motion_std)?;
        let (act, total) = action_and_total_loss(tape, pred, target, traj, self.cfg.lambda)?;
        Ok(LossOutput { traj, act, total })
    }

    pub fn loss(&self, tape: &mut Tape, batch: &TrainBatch) -> PolicyResult<LossOutput> {
        self.loss_with(tape, &self.params, batch)
    }

    /// Runs the model on one observation.
    pub fn act(&self, features: &ObservationFeatures, state: &[f64; 7], opts: &ForwardOptions) -> PolicyResult<PolicyStep> {
        let input = PolicyInput::from_observations(&self.layout, &self.normalizer, &[(features, state)])?;
        let mut tape = Tape::new(self.cfg.precision);
        let out = self.forward(&mut tape, &input, opts)?;
        let acts = tape.value(out.actions);
        let actions = (0..acts.rows()).map(|r| RelativeAction::from_slice(acts.row(r))).collect();
        let tau = out.tau.map(|t| {
            let v = tape.value(t);
            (0..v.rows()).map(|r| v.row(r).to_vec()).collect::<Vec<_>>()
        });
        let chart_violations = match (&tau, self.cfg.variant.target.is_se3(), self.cfg.variant.rotation) {
            (Some(rows), true, RotationChart::AxisAngle) => rows
                .iter()
                .filter(|r| (r[3] * r[3] + r[4] * r[4] + r[5] * r[5]).sqrt() >= std::f64::consts::PI)
                .count(),
            _ => 0,
        };
        Ok(PolicyStep { actions, tau, h_traj: out.h_traj.map(|v| tape.value(v).clone()), chart_violations })
    }

    /// Hidden-state offset whose image under the trajectory head equals
    /// `delta` row by row (minimum-norm solution of `dh W = delta / std`).
    pub fn hidden_offset_for(&self, delta: &[Vec<f64>]) -> PolicyResult<Tensor> {
        let head = self.trajectory_head().ok_or_else(|| PolicyError::Config("variant has no predictor".into()))?;
        let w = self.params.value(head.w);
        let (d, k) = (w.rows(), w.cols());
        let wm = DMatrix::from_row_slice(d, k, w.data());
        let gram = wm.transpose() * &wm;
        let inv = gram.try_inverse().ok_or_else(|| PolicyError::Config("trajectory head is rank deficient".into()))?;
        let pinv = inv * wm.transpose();
        let mut out = Vec::with_capacity(delta.len() * d);
        for row in delta {
            if row.len() != k {
                return Err(PolicyError::Config(format!("offset row of width {} for head of width {k}", row.len())));
            }
            let std = &self.normalizer.traj_std;
            let e = DMatrix::from_fn(1, k, |_, c| row[c] / std.get(c).copied().unwrap_or(1.0));
            out.extend((e * &pinv).iter().copied());
        }
        Ok(Tensor::matrix(delta.len(), d, out)?)
    }

    pub fn save(&self, dir: &Path, step: u64) -> PolicyResult<()> {
        let meta = CheckpointMeta { policy: self.cfg.clone(), layout: self.layout, normalizer: self.normalizer.clone() };
        let meta = serde_json::to_value(meta).map_err(|e| PolicyError::Config(e.to_string()))?;
        save_checkpoint(dir, &self.params, step, &self.config_hash(), meta)?;
        Ok(())
    }

    /// Loads a checkpoint; returns the model and its training step.
    pub fn load(dir: &Path) -> PolicyResult<(Policy, u64)> {
        let (manifest, params) = load_checkpoint(dir)?;
        let meta: CheckpointMeta = serde_json::from_value(manifest.meta.clone())
            .map_err(|e| PolicyError::Config(format!("checkpoint metadata: {e}")))?;
        let mut policy = build_variant(&meta.policy, &meta.layout, meta.normalizer)?;
        if policy.params.len() != params.len() {
            return Err(PolicyError::Config("checkpoint parameter list does not match the model".into()));
        }
        for ((_, a), (_, b)) in policy.params.iter().zip(params.iter()) {
            if a.name != b.name || a.value.shape() != b.value.shape() {
                return Err(PolicyError::Config(format!("checkpoint parameter {} does not match {}", b.name, a.name)));
            }
        }
        policy.params = params;
        Ok((policy, manifest.step))
    }
}
