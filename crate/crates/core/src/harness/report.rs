use std::path::Path;

use serde::{Deserialize, Serialize};

use super::stats::{wilson_interval, WILSON_Z95};
use super::study::{StudyKind, StudyTable};
use super::{io_err, HarnessError, HarnessResult};

pub const SUMMARY_SCHEMA: &str = "study_summary_v1";

pub const CSV_HEADER: &str =
    "cell,seed,successes,episodes,success_rate,wilson_lo,wilson_hi,chart_violation_rate,mean_traj_error,config_hash,error";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
    Both,
}

/// Per-cell aggregate: mean over completed seeds and a Wilson interval on the
/// pooled episode counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: String,
    pub seeds: Vec<u64>,
    pub failed_seeds: Vec<u64>,
    pub successes: usize,
    pub episodes: usize,
    pub mean_success: Option<f64>,
    pub wilson_lo: Option<f64>,
    pub wilson_hi: Option<f64>,
    pub config_hashes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub schema: String,
    pub kind: StudyKind,
    pub spec_hash: String,
    pub cells: Vec<CellSummary>,
}

impl StudySummary {
    pub fn from_table(table: &StudyTable) -> HarnessResult<Self> {
        let mut cells = Vec::with_capacity(table.cells.len());
        for label in &table.cells {
            let rows: Vec<_> = table.rows.iter().filter(|r| &r.cell == label).collect();
            let ok: Vec<_> = rows.iter().filter(|r| r.error.is_none()).collect();
            let successes = ok.iter().map(|r| r.successes).sum();
            let episodes = ok.iter().map(|r| r.episodes).sum();
            let interval = if episodes > 0 { Some(wilson_interval(successes, episodes, WILSON_Z95)?) } else { None };
            cells.push(CellSummary {
                cell: label.clone(),
                seeds: ok.iter().map(|r| r.seed).collect(),
                failed_seeds: rows.iter().filter(|r| r.error.is_some()).map(|r| r.seed).collect(),
                successes,
                episodes,
                mean_success: table.cell_mean(label),
                wilson_lo: interval.map(|i| i.0),
                wilson_hi: interval.map(|i| i.1),
                config_hashes: rows.iter().map(|r| r.config_hash.clone()).collect(),
            });
        }
        Ok(StudySummary { schema: SUMMARY_SCHEMA.into(), kind: table.kind, spec_hash: table.spec_hash.clone(), cells })
    }
}

/// `results.csv` text: one row per cell-seed, floats in shortest round-trip
/// form.
pub fn results_csv(table: &StudyTable) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for r in &table.rows {
        w.serialize(r).expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

/// Writes `results.csv` and/or `summary.json` into `dir`, creating it.
pub fn emit_report(table: &StudyTable, dir: &Path, format: ReportFormat) -> HarnessResult<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    if matches!(format, ReportFormat::Csv | ReportFormat::Both) {
        let path = dir.join("results.csv");
        std::fs::write(&path, results_csv(table)).map_err(io_err(&path))?;
    }
    if matches!(format, ReportFormat::Json | ReportFormat::Both) {
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&StudySummary::from_table(table)?).expect("summary serializes");
        std::fs::write(&path, text + "\n").map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn read_summary(path: &Path) -> HarnessResult<StudySummary> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let s: StudySummary =
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
    if s.schema != SUMMARY_SCHEMA {
        return Err(HarnessError::Config(format!("unknown summary schema {:?}", s.schema)));
    }
    Ok(s)
}
