//! A scaled-down supervision ladder: every trajectory target trained briefly
//! on the same demonstrations, written as results.csv and summary.json.

use se3policy::datasets::{SupervisionVariant, TrajTarget};
use se3policy::harness::{emit_report, run_study, ReportFormat, StudyKind, StudySpec};
use se3policy::policy::PolicyConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = StudySpec {
        episodes: 10,
        demos: 5,
        steps: 60,
        policy: Some(PolicyConfig::tiny(SupervisionVariant::new(TrajTarget::NoTraj))),
        ..StudySpec::new(StudyKind::Ladder, vec![0, 1])
    };
    let table = run_study(&spec)?;
    let out = std::env::temp_dir().join("se3policy_example_study");
    emit_report(&table, &out, ReportFormat::Both)?;
    for cell in &table.cells {
        println!("{cell:<20} mean success {:?}", table.cell_mean(cell));
    }
    println!("wrote {}", out.display());
    Ok(())
}
