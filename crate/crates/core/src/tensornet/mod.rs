//! Dense 2D tensors with a reverse-mode tape, the layer set used by the
//! policy, AdamW, finite-difference checking and checkpoints.
//!
//! Every tensor is viewed as `rows x cols`, where `cols` is the last axis and
//! `rows` the product of the others. Batched sequences are stacked along rows
//! in equal-length groups.

mod ckpt;
mod gradcheck;
mod layers;
mod optim;
mod params;
mod tape;

pub use ckpt::{load_checkpoint, save_checkpoint, CheckpointManifest, ParamEntry, CKPT_SCHEMA};
pub use gradcheck::{grad_check, grad_check_params, GradCheckReport, GRAD_CHECK_STEP};
pub use layers::{FeedForward, LayerNorm, Linear, MultiHeadAttention};
pub use optim::{adamw_step, lr_at, AdamWConfig, OptimizerState};
pub use params::{InitMeta, InitScheme, Param, ParamId, ParamSet};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS, ROPE_BASE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    /// Every op output is rounded to single precision.
    F32,
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric fault: non-finite value produced by {op}")]
    NumericFault { op: &'static str },
    #[error("loss must be scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("tape already consumed by a backward pass")]
    TapeConsumed,
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub type TensorResult<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> TensorResult<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || shape.is_empty() {
            return Err(TensorError::Shape { op: "tensor", left: shape, right: vec![data.len()] });
        }
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> TensorResult<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor { shape: vec![rows, cols], data: vec![0.0; rows * cols] }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Tensor { shape: vec![rows, cols], data: vec![v; rows * cols] }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn scalar(v: f64) -> Self {
        Tensor { shape: vec![1, 1], data: vec![v] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> TensorResult<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(TensorError::Shape { op: "from_rows", left: vec![cols], right: vec![r.len()] });
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols().max(1)
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}
