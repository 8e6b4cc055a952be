use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use se3policy::datasets::{record_demonstrations, write_dataset, RecordConfig};
use se3policy::harness::{
    closed_form_baseline, emit_report, evaluate, run_geomtest, run_gradcheck, run_study, train, EvalConfig, EvalReport,
    HarnessError, LearnedPolicy, PredictionNoise, ReportFormat, StudySpec, TrainConfig,
};
use se3policy::policy::Policy;
use se3policy::simworld::{DepthMode, ExpertConfig, NoiseConfig, SceneDocument};

#[derive(Parser)]
#[command(name = "se3policy", about = "Trajectory-aligned visuomotor policy toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted-expert demonstrations.
    GenData {
        /// Preset name (goal, spatial, long) or scene document path.
        #[arg(long)]
        scene: String,
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "metric")]
        depth: DepthArg,
        /// Positional actuation noise, meters per axis.
        #[arg(long, default_value_t = 0.0)]
        sigma_p: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma_theta: f64,
    },
    /// Train every seed of a train config on a dataset.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Closed-loop evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        episodes: usize,
        #[arg(long)]
        seed: u64,
        /// Drive the hardcoded pipeline from the checkpoint's predictor.
        #[arg(long)]
        closed_form: bool,
        #[arg(long, default_value = "goal")]
        scene: String,
        #[arg(long)]
        task: Option<String>,
        /// Gripper latency of the hardcoded pipeline, steps.
        #[arg(long, default_value_t = 0)]
        latency: usize,
        /// Prediction corruption, meters and radians.
        #[arg(long, default_value_t = 0.0)]
        perturb_p: f64,
        #[arg(long, default_value_t = 0.0)]
        perturb_theta: f64,
        #[arg(long, default_value_t = 0.0)]
        sigma_p: f64,
        /// Write the report JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an ablation study and write results.csv and summary.json.
    Study {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference checks of every tape op and the tiny policy loss.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Geometry round-trip, group-law and alignment checks.
    Geomtest {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DepthArg {
    Metric,
    Relative,
    None,
}

impl From<DepthArg> for DepthMode {
    fn from(d: DepthArg) -> Self {
        match d {
            DepthArg::Metric => DepthMode::Metric,
            DepthArg::Relative => DepthMode::Relative,
            DepthArg::None => DepthMode::None,
        }
    }
}

type CliResult = Result<bool, Box<dyn std::error::Error>>;

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Box<dyn std::error::Error>> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn load_doc(scene: &str) -> Result<SceneDocument, Box<dyn std::error::Error>> {
    Ok(SceneDocument::resolve(scene)?)
}

/// Checkpoint directories under `ckpt`: the directory itself, or its
/// `seed_*` children for a multi-seed training run.
fn checkpoints(ckpt: &Path) -> Result<Vec<PathBuf>, Box<dyn std::error::Error>> {
    if ckpt.join("manifest.json").exists() {
        return Ok(vec![ckpt.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(ckpt)
        .map_err(|e| format!("{}: {e}", ckpt.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(format!("no checkpoint found under {}", ckpt.display()).into());
    }
    Ok(dirs)
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::GenData { scene, task, n, seed, out, depth, sigma_p, sigma_theta } => {
            let doc = load_doc(&scene)?;
            let task = match &task {
                Some(t) => doc.task(t)?,
                None => doc.tasks.first().ok_or("scene document has no tasks")?,
            };
            let noise = NoiseConfig { sigma_p, sigma_theta, seed: seed ^ 0x5eed };
            let cfg = RecordConfig { episodes: n, seed, expert: ExpertConfig::for_noise(&noise), noise, depth_mode: depth.into() };
            let set = record_demonstrations(&doc.scene, task, &cfg)?;
            write_dataset(&set, &out)?;
            println!("wrote {} demonstrations ({} timesteps) to {}", set.demos.len(), set.header.timesteps, out.display());
            Ok(true)
        }
        Command::Train { config, data, out } => {
            let cfg: TrainConfig = read_json(&config)?;
            let runs = train(&cfg, &data, &out)?;
            for r in &runs {
                let last = r.history.last();
                println!(
                    "seed {}: {} steps, final L_total {}",
                    r.seed,
                    r.history.len(),
                    last.map(|l| format!("{:.5}", l.l_total)).unwrap_or_else(|| "-".into())
                );
            }
            Ok(true)
        }
        Command::Eval { ckpt, episodes, seed, closed_form, scene, task, latency, perturb_p, perturb_theta, sigma_p, out } => {
            let doc = load_doc(&scene)?;
            let task = match &task {
                Some(t) => doc.task(t)?,
                None => doc.tasks.first().ok_or("scene document has no tasks")?,
            };
            let cfg = EvalConfig {
                noise: NoiseConfig { sigma_p, sigma_theta: 0.0, seed: seed ^ 0x0e7a1 },
                ..EvalConfig::new(episodes, seed)
            };
            let perturbation = (perturb_p > 0.0 || perturb_theta > 0.0)
                .then_some(PredictionNoise { sigma_p: perturb_p, sigma_theta: perturb_theta, seed });
            let mut reports: Vec<EvalReport> = Vec::new();
            for dir in checkpoints(&ckpt)? {
                let (policy, _) = Policy::load(&dir)?;
                let report = if closed_form {
                    closed_form_baseline(&policy, &doc.scene, task, latency, perturbation, &cfg)?
                } else {
                    let mut lp = match perturbation {
                        Some(n) => LearnedPolicy::with_noise(&policy, doc.scene.camera, n)?,
                        None => LearnedPolicy::new(&policy, doc.scene.camera),
                    };
                    evaluate(&doc.scene, task, &mut lp, &cfg)?
                };
                eprintln!(
                    "{}: {}/{} success, Wilson [{:.3}, {:.3}]",
                    dir.display(),
                    report.successes,
                    report.episodes,
                    report.wilson_lo,
                    report.wilson_hi
                );
                reports.push(report);
            }
            let text = serde_json::to_string_pretty(&reports)?;
            println!("{text}");
            if let Some(path) = out {
                std::fs::write(&path, text + "\n").map_err(|e| format!("{}: {e}", path.display()))?;
            }
            Ok(true)
        }
        Command::Study { spec, out } => {
            let spec: StudySpec = read_json(&spec)?;
            let table = run_study(&spec)?;
            emit_report(&table, &out, ReportFormat::Both)?;
            for cell in &table.cells {
                let mean = table.cell_mean(cell).map(|m| format!("{:.3}", m)).unwrap_or_else(|| "failed".into());
                println!("{cell}: {mean}");
            }
            let failed = table.rows.iter().filter(|r| r.error.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} cell-seed runs failed; see results.csv");
            }
            Ok(failed == 0)
        }
        Command::Gradcheck { seed } => {
            let r = run_gradcheck(seed)?;
            print!("{}", r.render());
            Ok(r.passed())
        }
        Command::Geomtest { samples, seed } => {
            let t = Instant::now();
            let r = run_geomtest(samples, seed)?;
            print!("{}", r.render());
            println!("elapsed {:.2}s", t.elapsed().as_secs_f64());
            Ok(r.passed())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            if let Some(HarnessError::NumericFault { checkpoint: Some(c), .. }) = e.downcast_ref::<HarnessError>() {
                eprintln!("last good checkpoint: {}", c.display());
            }
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
