//! Hardcoded decoder driven by oracle future poses, with and without
//! gripper latency.

use se3policy::harness::{evaluate, ClosedFormPolicy, EvalConfig, TrajectorySource};
use se3policy::simworld::{ExpertConfig, SceneDocument, TaskFamily};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let doc = SceneDocument::preset(TaskFamily::Goal);
    let task = &doc.tasks[0];
    for latency in [0, 1, 2, 4] {
        let source = TrajectorySource::Oracle { expert: ExpertConfig::default(), horizon: 8 };
        let mut cf = ClosedFormPolicy::new(source, doc.scene.camera, latency)?;
        let r = evaluate(&doc.scene, task, &mut cf, &EvalConfig::new(20, 11))?;
        println!("gripper latency {latency}: {}/{} successes", r.successes, r.episodes);
    }
    Ok(())
}
