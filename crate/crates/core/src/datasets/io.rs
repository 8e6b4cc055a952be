use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::record::{DatasetHeader, DemoSet, Demonstration, Timestep};
use super::{DatasetError, DatasetResult};

pub const DEMOS_SCHEMA: &str = "demos_v1";

#[derive(Serialize, Deserialize)]
struct Line<T> {
    episode: usize,
    seed: u64,
    t: usize,
    #[serde(flatten)]
    step: T,
}

fn io_err(path: &Path, source: std::io::Error) -> DatasetError {
    DatasetError::Io { path: path.display().to_string(), source }
}

/// Writes the header on line 1 followed by one JSON object per timestep.
pub fn write_dataset(set: &DemoSet, path: &Path) -> DatasetResult<()> {
    let f = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    let encode = |e: serde_json::Error| DatasetError::Config(format!("serialization failed: {e}"));
    serde_json::to_writer(&mut w, &set.header).map_err(encode)?;
    w.write_all(b"\n").map_err(|e| io_err(path, e))?;
    for (episode, demo) in set.demos.iter().enumerate() {
        for (t, step) in demo.steps.iter().enumerate() {
            let line = Line { episode, seed: demo.episode_seed, t, step };
            serde_json::to_writer(&mut w, &line).map_err(encode)?;
            w.write_all(b"\n").map_err(|e| io_err(path, e))?;
        }
    }
    w.flush().map_err(|e| io_err(path, e))
}

pub fn read_dataset(path: &Path) -> DatasetResult<DemoSet> {
    let f = File::open(path).map_err(|e| io_err(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines
        .next()
        .ok_or(DatasetError::Truncated { line: 1, message: "missing header".into() })?
        .map_err(|e| io_err(path, e))?;
    let header: DatasetHeader =
        serde_json::from_str(&first).map_err(|e| DatasetError::Parse { line: 1, message: e.to_string() })?;
    if header.schema != DEMOS_SCHEMA {
        return Err(DatasetError::Parse { line: 1, message: format!("unknown schema {:?}", header.schema) });
    }

    let mut demos: Vec<Demonstration> = Vec::with_capacity(header.episode_seeds.len());
    let mut n_lines = 1usize;
    for (i, raw) in lines.enumerate() {
        let line_no = i + 2;
        n_lines = line_no;
        let raw = raw.map_err(|e| io_err(path, e))?;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: Line<Timestep> = serde_json::from_str(&raw)
            .map_err(|e| DatasetError::Parse { line: line_no, message: e.to_string() })?;
        if rec.episode == demos.len() {
            demos.push(Demonstration { episode_seed: rec.seed, steps: Vec::new() });
        }
        if rec.episode + 1 != demos.len() {
            return Err(DatasetError::Parse { line: line_no, message: format!("episode {} out of order", rec.episode) });
        }
        let demo = demos.last_mut().expect("non-empty");
        if rec.t != demo.steps.len() || rec.seed != demo.episode_seed {
            return Err(DatasetError::Parse {
                line: line_no,
                message: format!("expected t={} of episode {}, got t={}", demo.steps.len(), rec.episode, rec.t),
            });
        }
        demo.steps.push(rec.step);
    }

    let total: usize = demos.iter().map(|d| d.len()).sum();
    let terminal_ok = demos.iter().all(|d| d.steps.last().is_some_and(|s| s.action.is_none()));
    if demos.len() != header.episode_seeds.len() || total != header.timesteps || !terminal_ok {
        return Err(DatasetError::Truncated {
            line: n_lines,
            message: format!(
                "header declares {} episodes / {} timesteps, found {} / {}",
                header.episode_seeds.len(),
                header.timesteps,
                demos.len(),
                total
            ),
        });
    }
    Ok(DemoSet { header, demos })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::record::{record_demonstrations, RecordConfig};
    use crate::simworld::{DepthMode, ExpertConfig, NoiseConfig, SceneDocument, TaskFamily};

    fn set() -> DemoSet {
        let doc = SceneDocument::preset(TaskFamily::Long);
        let cfg = RecordConfig {
            episodes: 3,
            seed: 11,
            expert: ExpertConfig { arrive_tol: 0.01, ..ExpertConfig::default() },
            noise: NoiseConfig { sigma_p: 0.001, sigma_theta: 0.002, seed: 4 },
            depth_mode: DepthMode::Relative,
        };
        record_demonstrations(&doc.scene, &doc.tasks[0], &cfg).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let s = set();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&s, &p).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn truncation_is_detected() {
        let s = set();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&s, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let kept: Vec<&str> = text.lines().collect();
        std::fs::write(&p, kept[..kept.len() - 3].join("\n")).unwrap();
        assert!(matches!(read_dataset(&p), Err(DatasetError::Truncated { .. })));
    }

    #[test]
    fn parse_error_names_the_line() {
        let s = set();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_dataset(&s, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[4] = "{not json".into();
        std::fs::write(&p, lines.join("\n")).unwrap();
        assert!(matches!(read_dataset(&p), Err(DatasetError::Parse { line: 5, .. })));
    }
}
