//! Trains a small camera-frame SE(3) policy on recorded demonstrations and
//! evaluates it in closed loop. Pass a step count to train longer.

use se3policy::datasets::{record_demonstrations, RecordConfig, SupervisionVariant, TrajTarget};
use se3policy::harness::{evaluate, train_on, EvalConfig, LearnedPolicy, TrainConfig};
use se3policy::policy::{Policy, PolicyConfig};
use se3policy::simworld::{DepthMode, ExpertConfig, NoiseConfig, SceneDocument, TaskFamily};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let steps: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1500);
    let doc = SceneDocument::preset(TaskFamily::Goal);
    let task = &doc.tasks[0];
    let rec = RecordConfig { episodes: 20, seed: 100, expert: ExpertConfig::default(), noise: NoiseConfig::none(), depth_mode: DepthMode::Metric };
    let set = record_demonstrations(&doc.scene, task, &rec)?;

    let mut cfg = TrainConfig::desk(PolicyConfig::desk(SupervisionVariant::new(TrajTarget::TrajCameraSE3)));
    cfg.steps = steps;
    cfg.optimizer.warmup_steps = cfg.optimizer.warmup_steps.min(steps / 10);
    let dir = std::env::temp_dir().join("se3policy_example_ckpt");
    let run = train_on(&set, &cfg, 0, Some(&dir))?;
    for r in run.history.iter().step_by((steps as usize / 5).max(1)) {
        println!("step {:>5}: L_traj {:.4} L_act {:.4} L_total {:.4}", r.step, r.l_traj.unwrap_or(0.0), r.l_act, r.l_total);
    }

    let (policy, step) = Policy::load(&dir)?;
    let mut lp = LearnedPolicy::new(&policy, doc.scene.camera);
    let report = evaluate(&doc.scene, task, &mut lp, &EvalConfig::new(20, 2024))?;
    println!(
        "checkpoint at step {step}: {}/{} successes, Wilson [{:.3}, {:.3}]",
        report.successes, report.episodes, report.wilson_lo, report.wilson_hi
    );
    Ok(())
}
