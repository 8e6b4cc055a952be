//! Synthetic observation tokens standing in for pretrained vision-language
//! and metric-depth encoders.
//!
//! Keypoints are the end-effector, every object, every container, and the
//! latch region when present, in that order. Token layout (dimension
//! `3 + K` for `K` keypoints):
//!
//! * language: `[one-hot target object | one-hot target container | one-hot family | 0...]`
//! * visual:   `[u / width, v / height, aux, one-hot keypoint tag]`
//! * depth:    `[z, 0, 0, one-hot keypoint tag]`
//!
//! `aux` is the gripper opening for the end-effector, the latch state for the
//! latch, and zero otherwise.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::scene::{CameraModel, SceneSpec, TaskSpec};
use super::sim::SimState;
use super::{SimError, SimResult};
use crate::geometry::{project_pinhole, se3_inverse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    Metric,
    /// Per-frame min-max normalized to `[0, 1]`.
    Relative,
    None,
}

impl DepthMode {
    pub const ALL: [DepthMode; 3] = [DepthMode::Metric, DepthMode::Relative, DepthMode::None];
}

/// Block sizes shared by every observation of a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub token_dim: usize,
    pub n_language: usize,
    pub n_visual: usize,
    pub n_depth: usize,
}

impl FeatureLayout {
    pub fn for_scene(scene: &SceneSpec, depth_mode: DepthMode) -> Self {
        let k = keypoint_count(scene);
        FeatureLayout {
            token_dim: 3 + k,
            n_language: 1,
            n_visual: k,
            n_depth: if depth_mode == DepthMode::None { 0 } else { k },
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.n_language + self.n_visual + self.n_depth
    }
}

fn keypoint_count(scene: &SceneSpec) -> usize {
    1 + scene.objects.len() + scene.containers.len() + usize::from(scene.latch.is_some())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationFeatures {
    pub layout: FeatureLayout,
    pub language: Vec<Vec<f64>>,
    pub visual: Vec<Vec<f64>>,
    pub depth: Vec<Vec<f64>>,
}

impl ObservationFeatures {
    pub fn token_count(&self) -> usize {
        self.language.len() + self.visual.len() + self.depth.len()
    }

    /// All tokens in (language, visual, depth) order.
    pub fn tokens(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.language.iter().chain(&self.visual).chain(&self.depth)
    }
}

pub fn featurize(
    state: &SimState,
    task: &TaskSpec,
    scene: &SceneSpec,
    cam: &CameraModel,
    depth_mode: DepthMode,
) -> SimResult<ObservationFeatures> {
    let layout = FeatureLayout::for_scene(scene, depth_mode);
    let dim = layout.token_dim;
    let k = layout.n_visual;

    let mut language = vec![0.0; dim];
    let obj_idx = scene
        .objects
        .iter()
        .position(|o| o.id == task.target_object)
        .ok_or_else(|| SimError::InvalidTask(task.target_object.clone()))?;
    let cont_idx = scene
        .containers
        .iter()
        .position(|c| c.id == task.target_container)
        .ok_or_else(|| SimError::InvalidTask(task.target_container.clone()))?;
    language[obj_idx] = 1.0;
    language[scene.objects.len() + cont_idx] = 1.0;
    language[scene.objects.len() + scene.containers.len() + task.family.index()] = 1.0;

    let mut points: Vec<(Vector3<f64>, f64)> = Vec::with_capacity(k);
    points.push((state.ee_pose.translation, state.gripper));
    for o in &scene.objects {
        points.push((state.object_position(&o.id)?, 0.0));
    }
    for c in &scene.containers {
        points.push((Vector3::from(c.center), 0.0));
    }
    if let Some(l) = &scene.latch {
        points.push((Vector3::from(l.center), if state.latch_visited { 1.0 } else { 0.0 }));
    }

    let world_to_cam = se3_inverse(&cam.extrinsic.t_cam_to_world);
    let mut visual = Vec::with_capacity(k);
    let mut depths = Vec::with_capacity(k);
    for (i, (p, aux)) in points.iter().enumerate() {
        let pc = world_to_cam.transform_point(p);
        let proj = project_pinhole(&pc, &cam.intrinsic)?;
        let mut tok = vec![0.0; dim];
        tok[0] = proj.uv[0] / cam.intrinsic.width;
        tok[1] = proj.uv[1] / cam.intrinsic.height;
        tok[2] = *aux;
        tok[3 + i] = 1.0;
        visual.push(tok);
        depths.push(pc.z);
    }

    let depth_values: Vec<f64> = match depth_mode {
        DepthMode::Metric => depths,
        DepthMode::Relative => {
            let lo = depths.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = hi - lo;
            depths.iter().map(|z| if span > 0.0 { (z - lo) / span } else { 0.0 }).collect()
        }
        DepthMode::None => Vec::new(),
    };
    let depth = depth_values
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let mut tok = vec![0.0; dim];
            tok[0] = *z;
            tok[3 + i] = 1.0;
            tok
        })
        .collect();

    Ok(ObservationFeatures { layout, language: vec![language], visual, depth })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraExtrinsic, RotationMatrix, SE3Transform};
    use crate::simworld::scene::{SceneDocument, TaskFamily};
    use crate::simworld::sim::reset;

    #[test]
    fn block_arithmetic() {
        let doc = SceneDocument::preset(TaskFamily::Goal);
        let s = reset(&doc.scene, &doc.tasks[0], 0).unwrap();
        let cam = doc.scene.camera;
        let f = featurize(&s, &doc.tasks[0], &doc.scene, &cam, DepthMode::None).unwrap();
        assert_eq!(f.token_count(), 1 + 5);
        let f = featurize(&s, &doc.tasks[0], &doc.scene, &cam, DepthMode::Metric).unwrap();
        assert_eq!(f.token_count(), 1 + 5 + 5);
        assert!(f.tokens().all(|t| t.len() == 8));
    }

    #[test]
    fn metric_depth_reads_camera_z() {
        let doc = SceneDocument::preset(TaskFamily::Goal);
        let mut s = reset(&doc.scene, &doc.tasks[0], 0).unwrap();
        // Camera at the origin looking along world +z; put the end-effector 0.8 m in front.
        let cam = CameraModel {
            extrinsic: CameraExtrinsic::new(SE3Transform::new(RotationMatrix::identity(), Vector3::new(0.0, 0.0, -1.0))),
            intrinsic: doc.scene.camera.intrinsic,
        };
        s.ee_pose.translation = Vector3::new(0.0, 0.0, -0.2);
        let f = featurize(&s, &doc.tasks[0], &doc.scene, &cam, DepthMode::Metric).unwrap();
        assert!((f.depth[0][0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn relative_depth_spans_unit_interval() {
        let doc = SceneDocument::preset(TaskFamily::Spatial);
        for seed in 0..20 {
            let s = reset(&doc.scene, &doc.tasks[0], seed).unwrap();
            let f = featurize(&s, &doc.tasks[0], &doc.scene, &doc.scene.camera, DepthMode::Relative).unwrap();
            let zs: Vec<f64> = f.depth.iter().map(|t| t[0]).collect();
            assert_eq!(zs.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
            assert_eq!(zs.iter().copied().fold(f64::NEG_INFINITY, f64::max), 1.0);
        }
    }

    #[test]
    fn behind_camera_errors() {
        let doc = SceneDocument::preset(TaskFamily::Goal);
        let s = reset(&doc.scene, &doc.tasks[0], 0).unwrap();
        let cam = CameraModel {
            extrinsic: CameraExtrinsic::new(SE3Transform::new(RotationMatrix::identity(), Vector3::new(0.0, 0.0, 1.0))),
            intrinsic: doc.scene.camera.intrinsic,
        };
        assert!(featurize(&s, &doc.tasks[0], &doc.scene, &cam, DepthMode::Metric).is_err());
    }
}
