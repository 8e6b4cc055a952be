//! Records demonstrations, writes them to disk, and builds supervision
//! targets for each trajectory variant.

use se3policy::datasets::{
    make_supervision, make_windows, read_dataset, record_demonstrations, write_dataset, RecordConfig,
    SupervisionVariant, TrajTarget,
};
use se3policy::simworld::{DepthMode, ExpertConfig, NoiseConfig, SceneDocument, TaskFamily};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let doc = SceneDocument::preset(TaskFamily::Spatial);
    let cfg = RecordConfig { episodes: 5, seed: 7, expert: ExpertConfig::default(), noise: NoiseConfig::none(), depth_mode: DepthMode::Metric };
    let set = record_demonstrations(&doc.scene, &doc.tasks[0], &cfg)?;

    let path = std::env::temp_dir().join("se3policy_example_demos.jsonl");
    write_dataset(&set, &path)?;
    let back = read_dataset(&path)?;
    println!("{} demos, {} timesteps, round trip equal: {}", back.demos.len(), back.header.timesteps, back == set);

    let windows = make_windows(&back.demos[0], 8)?;
    println!("demo 0: {} windows", windows.len());
    for target in TrajTarget::ALL {
        let v = SupervisionVariant::new(target);
        if v.target_dim() == 0 {
            println!("{:<16} no trajectory target", v.label());
            continue;
        }
        let s = make_supervision(&windows[0], &v, &back.header.camera, 1.0)?;
        println!("{:<16} first row {:?}", v.label(), s.row(0));
    }
    Ok(())
}
