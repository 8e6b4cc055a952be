//! Kinematic tabletop pick-and-place world.
//!
//! Quasi-static: the end-effector moves exactly as commanded (after clamping
//! and optional actuation noise), grasped objects follow it rigidly, and
//! released objects settle straight down.

mod expert;
mod features;
mod scene;
mod sim;

pub use expert::{ExpertConfig, ExpertPhase, ScriptedExpert};
pub use features::{featurize, DepthMode, FeatureLayout, ObservationFeatures};
pub use scene::{
    Aabb, CameraModel, ContainerSpec, HomePose, LatchSpec, ObjectSpec, SceneDocument, SceneSpec,
    TaskFamily, TaskSpec, DEFAULT_ACCEPT_RADIUS, DEFAULT_GRASP_RADIUS, DEFAULT_HORIZON,
    DEFAULT_JITTER_RADIUS, SCENE_SCHEMA,
};
pub use sim::{
    check_success, reset, Attachment, NoiseConfig, SimState, Simulator, StepOutcome,
    GRIPPER_THRESHOLD, MAX_GRIPPER_RATE, MAX_STEP_ROTATION, MAX_STEP_TRANSLATION,
};

use thiserror::Error;

use crate::geometry::GeometryError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("could not place object {0} inside the table after 100 jitter draws")]
    JitterExhausted(String),
    #[error("episode terminated: horizon of {horizon} steps reached")]
    EpisodeTerminated { horizon: usize },
    #[error("action contains non-finite values")]
    NonFiniteAction,
    #[error("expert failure: {0}")]
    ExpertFailure(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type SimResult<T> = std::result::Result<T, SimError>;
