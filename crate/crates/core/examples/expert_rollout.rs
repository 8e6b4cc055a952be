//! Scripted expert on each preset task family, with and without actuation
//! noise.

use se3policy::harness::{evaluate, EvalConfig, ExpertPolicy};
use se3policy::simworld::{ExpertConfig, NoiseConfig, SceneDocument, ScriptedExpert, Simulator, TaskFamily};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for family in TaskFamily::ALL {
        let doc = SceneDocument::preset(family);
        let task = &doc.tasks[0];

        let mut sim = Simulator::new(&doc.scene, task, 1, NoiseConfig::none())?;
        let mut expert = ScriptedExpert::new(ExpertConfig::default());
        let mut phases = Vec::new();
        while !sim.is_success() && !sim.is_terminated() {
            let phase = expert.phase(sim.state(), &doc.scene, task)?;
            if phases.last() != Some(&phase) {
                phases.push(phase);
            }
            let a = expert.act(sim.state(), &doc.scene, task)?;
            sim.step(&a)?;
        }
        println!("{} / {}: phases {phases:?}", family.name(), task.name);

        let noise = NoiseConfig { sigma_p: 0.002, sigma_theta: 0.0, seed: 3 };
        let mut policy = ExpertPolicy::new(ExpertConfig::for_noise(&noise));
        let r = evaluate(&doc.scene, task, &mut policy, &EvalConfig { noise, ..EvalConfig::new(20, 5) })?;
        println!("  noisy actuation (2 mm): {}/{} episodes", r.successes, r.episodes);
    }
    Ok(())
}
