//! Trajectory-supervised action policy: encoder, SE(3) trajectory predictor,
//! action decoder and losses, wired per supervision variant.

mod batch;
mod config;
mod losses;
mod model;

pub use batch::{FeatureNormalizer, PolicyInput, TrainBatch};
pub use config::{PolicyConfig, POLICY_SCHEMA};
pub use losses::{action_and_total_loss, trajectory_loss, LossOutput};
pub use model::{build_variant, ForwardOptions, ForwardOutput, HTrajEdit, Policy, PolicyStep};

use thiserror::Error;

use crate::datasets::DatasetError;
use crate::geometry::GeometryError;
use crate::tensornet::TensorError;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type PolicyResult<T> = std::result::Result<T, PolicyError>;
