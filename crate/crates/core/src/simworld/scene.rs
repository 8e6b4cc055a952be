use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{SimError, SimResult};
use crate::geometry::{CameraExtrinsic, CameraIntrinsic};

pub const SCENE_SCHEMA: &str = "scene_spec_v1";
pub const DEFAULT_GRASP_RADIUS: f64 = 0.02;
pub const DEFAULT_ACCEPT_RADIUS: f64 = 0.04;
pub const DEFAULT_JITTER_RADIUS: f64 = 0.03;
pub const DEFAULT_HORIZON: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: &Vector3<f64>) -> Vector3<f64> {
        Vector3::from_fn(|i, _| p[i].clamp(self.min[i], self.max[i]))
    }
}

fn default_grasp_radius() -> f64 {
    DEFAULT_GRASP_RADIUS
}
fn default_accept_radius() -> f64 {
    DEFAULT_ACCEPT_RADIUS
}
fn default_jitter() -> f64 {
    DEFAULT_JITTER_RADIUS
}
fn default_horizon() -> usize {
    DEFAULT_HORIZON
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub position: [f64; 3],
    #[serde(default = "default_grasp_radius")]
    pub grasp_radius: f64,
    /// End-effector yaw the expert uses when grasping this object.
    #[serde(default)]
    pub grasp_yaw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerSpec {
    pub id: String,
    pub center: [f64; 3],
    #[serde(default = "default_accept_radius")]
    pub accept_radius: f64,
    /// End-effector yaw the expert carries the object to; `None` keeps the
    /// grasp yaw.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub place_yaw: Option<f64>,
}

/// Region the end-effector must visit before placing, for long tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatchSpec {
    pub center: [f64; 3],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomePose {
    pub position: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub extrinsic: CameraExtrinsic,
    pub intrinsic: CameraIntrinsic,
}

impl Default for CameraModel {
    /// Third-person view from the front, 45 degrees above the table.
    fn default() -> Self {
        let extrinsic = CameraExtrinsic::look_at(
            Vector3::new(0.0, -0.7, 0.7),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::z(),
        )
        .expect("fixed camera pose is valid");
        let intrinsic = CameraIntrinsic::new(200.0, 200.0, 112.0, 112.0, 224.0, 224.0)
            .expect("fixed intrinsic is valid");
        CameraModel { extrinsic, intrinsic }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub table_bounds: Aabb,
    pub objects: Vec<ObjectSpec>,
    pub containers: Vec<ContainerSpec>,
    #[serde(default)]
    pub latch: Option<LatchSpec>,
    pub rng_seed: u64,
    #[serde(default = "default_jitter")]
    pub jitter_radius: f64,
    pub home: HomePose,
    #[serde(default)]
    pub camera: CameraModel,
}

impl SceneSpec {
    pub fn validate(&self) -> SimResult<()> {
        let b = &self.table_bounds;
        if (0..3).any(|i| !(b.min[i] < b.max[i])) {
            return Err(SimError::InvalidScene("table bounds are empty".into()));
        }
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id.as_str()) {
                return Err(SimError::InvalidScene(format!("duplicate id {}", o.id)));
            }
            if !(o.grasp_radius > 0.0) {
                return Err(SimError::InvalidScene(format!("object {} grasp_radius must be > 0", o.id)));
            }
            if !b.contains(&Vector3::from(o.position)) {
                return Err(SimError::InvalidScene(format!("object {} outside table bounds", o.id)));
            }
        }
        for c in &self.containers {
            if !ids.insert(c.id.as_str()) {
                return Err(SimError::InvalidScene(format!("duplicate id {}", c.id)));
            }
            if !(c.accept_radius > 0.0) {
                return Err(SimError::InvalidScene(format!("container {} accept_radius must be > 0", c.id)));
            }
            if !b.contains(&Vector3::from(c.center)) {
                return Err(SimError::InvalidScene(format!("container {} outside table bounds", c.id)));
            }
        }
        if let Some(l) = &self.latch {
            if !(l.radius > 0.0) || !b.contains(&Vector3::from(l.center)) {
                return Err(SimError::InvalidScene("latch region invalid".into()));
            }
        }
        if !(self.jitter_radius >= 0.0) {
            return Err(SimError::InvalidScene("jitter_radius must be >= 0".into()));
        }
        if !b.contains(&Vector3::from(self.home.position)) {
            return Err(SimError::InvalidScene("home pose outside table bounds".into()));
        }
        self.camera.intrinsic.validate()?;
        self.camera.extrinsic.t_cam_to_world.validate()?;
        Ok(())
    }

    pub fn object(&self, id: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn container(&self, id: &str) -> Option<&ContainerSpec> {
        self.containers.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Goal,
    Spatial,
    /// Visit the latch region first, then place.
    Long,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 3] = [TaskFamily::Goal, TaskFamily::Spatial, TaskFamily::Long];

    pub fn index(self) -> usize {
        match self {
            TaskFamily::Goal => 0,
            TaskFamily::Spatial => 1,
            TaskFamily::Long => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::Goal => "goal",
            TaskFamily::Spatial => "spatial",
            TaskFamily::Long => "long",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub target_object: String,
    pub target_container: String,
    #[serde(default = "default_horizon")]
    pub horizon_limit: usize,
    pub family: TaskFamily,
}

impl TaskSpec {
    pub fn validate(&self, scene: &SceneSpec) -> SimResult<()> {
        if scene.object(&self.target_object).is_none() {
            return Err(SimError::InvalidTask(format!("unknown object {}", self.target_object)));
        }
        if scene.container(&self.target_container).is_none() {
            return Err(SimError::InvalidTask(format!(
                "unknown container {}",
                self.target_container
            )));
        }
        if self.horizon_limit == 0 {
            return Err(SimError::InvalidTask("horizon_limit must be > 0".into()));
        }
        if self.family == TaskFamily::Long && scene.latch.is_none() {
            return Err(SimError::InvalidTask("long task requires a latch region".into()));
        }
        Ok(())
    }
}

/// The `scene_spec_v1` JSON document: one scene and the tasks defined on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDocument {
    pub schema: String,
    pub scene: SceneSpec,
    pub tasks: Vec<TaskSpec>,
}

impl SceneDocument {
    pub fn new(scene: SceneSpec, tasks: Vec<TaskSpec>) -> Self {
        SceneDocument { schema: SCENE_SCHEMA.to_string(), scene, tasks }
    }

    pub fn validate(&self) -> SimResult<()> {
        if self.schema != SCENE_SCHEMA {
            return Err(SimError::InvalidScene(format!(
                "schema {:?}, expected {SCENE_SCHEMA}",
                self.schema
            )));
        }
        self.scene.validate()?;
        for t in &self.tasks {
            t.validate(&self.scene)?;
        }
        Ok(())
    }

    pub fn task(&self, name: &str) -> SimResult<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| SimError::InvalidTask(format!("no task named {name}")))
    }

    pub fn from_json(text: &str) -> SimResult<Self> {
        let doc: SceneDocument =
            serde_json::from_str(text).map_err(|e| SimError::InvalidScene(e.to_string()))?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> SimResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::InvalidScene(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Built-in desk scene for a task family.
    pub fn preset(family: TaskFamily) -> Self {
        let table_bounds = Aabb { min: [-0.4, -0.4, 0.0], max: [0.4, 0.4, 0.5] };
        let home = HomePose { position: [0.0, 0.0, 0.25], yaw: 0.0 };
        let obj = |id: &str, x: f64, y: f64, yaw: f64| ObjectSpec {
            id: id.into(),
            position: [x, y, 0.02],
            grasp_radius: DEFAULT_GRASP_RADIUS,
            grasp_yaw: yaw,
        };
        let cont = |id: &str, x: f64, y: f64, yaw: f64| ContainerSpec {
            id: id.into(),
            center: [x, y, 0.02],
            accept_radius: DEFAULT_ACCEPT_RADIUS,
            place_yaw: Some(yaw),
        };
        let (objects, containers, latch, task) = match family {
            TaskFamily::Goal => (
                vec![obj("cube", 0.12, 0.08, 0.4), obj("cylinder", -0.12, 0.12, -0.3)],
                vec![cont("bowl", -0.12, -0.1, -0.5), cont("plate", 0.14, -0.12, 0.8)],
                None,
                TaskSpec {
                    name: "cube_to_bowl".into(),
                    target_object: "cube".into(),
                    target_container: "bowl".into(),
                    horizon_limit: DEFAULT_HORIZON,
                    family,
                },
            ),
            TaskFamily::Spatial => (
                vec![obj("left_cube", -0.1, 0.1, 0.2), obj("right_cube", 0.1, 0.1, -0.2)],
                vec![cont("bowl", 0.0, -0.12, -0.5)],
                None,
                TaskSpec {
                    name: "right_cube_to_bowl".into(),
                    target_object: "right_cube".into(),
                    target_container: "bowl".into(),
                    horizon_limit: DEFAULT_HORIZON,
                    family,
                },
            ),
            TaskFamily::Long => (
                vec![obj("cube", 0.1, 0.1, 0.3)],
                vec![cont("drawer", -0.14, -0.08, -0.5)],
                Some(LatchSpec { center: [-0.15, 0.15, 0.1], radius: 0.03 }),
                TaskSpec {
                    name: "open_latch_then_place".into(),
                    target_object: "cube".into(),
                    target_container: "drawer".into(),
                    horizon_limit: DEFAULT_HORIZON,
                    family,
                },
            ),
        };
        let scene = SceneSpec {
            table_bounds,
            objects,
            containers,
            latch,
            rng_seed: 7 + family.index() as u64,
            jitter_radius: DEFAULT_JITTER_RADIUS,
            home,
            camera: CameraModel::default(),
        };
        SceneDocument::new(scene, vec![task])
    }

    /// Resolves a CLI `--scene` argument: a preset family name or a JSON path.
    pub fn resolve(arg: &str) -> SimResult<Self> {
        match arg {
            "goal" => Ok(Self::preset(TaskFamily::Goal)),
            "spatial" => Ok(Self::preset(TaskFamily::Spatial)),
            "long" => Ok(Self::preset(TaskFamily::Long)),
            path => Self::load(Path::new(path)),
        }
    }
}
