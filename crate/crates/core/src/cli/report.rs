//! Run records on disk and the aggregate results table.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::kernel::{CheckReport, ExploreConfig, Mode};

/// Suffix of the per-run JSON record.
pub const RECORD_SUFFIX: &str = ".report.json";

/// What `check`, `simulate` and `hunt` write next to their traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    /// Settings summary shown in the config column.
    pub config: String,
    pub explore: ExploreConfig,
    pub report: CheckReport,
    /// Trace file per violation, same order as `report.violations`.
    pub traces: Vec<PathBuf>,
}

impl RunRecord {
    pub fn write(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = dir.join(format!("{}{RECORD_SUFFIX}", self.label));
        let json = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(&path, json + "\n")?;
        Ok(path)
    }
}

pub const COLUMNS: [&str; 5] = ["config", "mode", "states explored", "diameter", "time"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

fn row(r: &RunRecord) -> Vec<String> {
    let mode = match r.report.mode {
        Mode::Bfs => "BFS",
        Mode::Simulation => "simulation",
    };
    let diameter = match (r.report.mode, r.report.diameter) {
        (Mode::Bfs, Some(d)) => d.to_string(),
        _ => "-".to_string(),
    };
    vec![
        r.config.clone(),
        mode.to_string(),
        r.report.states_explored.to_string(),
        diameter,
        format!("{:.2}s", r.report.wall_time_ms as f64 / 1000.0),
    ]
}

impl Table {
    pub fn from_records(records: &[RunRecord]) -> Self {
        Table {
            columns: COLUMNS.iter().map(|c| c.to_string()).collect(),
            rows: records.iter().map(row).collect(),
        }
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        let mut widths: Vec<usize> = self.columns.iter().map(String::len).collect();
        for r in &self.rows {
            for (w, c) in widths.iter_mut().zip(r) {
                *w = (*w).max(c.len());
            }
        }
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| {
                    if i == 0 {
                        format!("{c:<w$}")
                    } else {
                        format!("{c:>w$}")
                    }
                })
                .collect();
            padded.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.columns);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out += &line(&rule);
        for r in &self.rows {
            out += &line(r);
        }
        out
    }
}

/// Every run record directly inside `dir`, sorted by file name.
pub fn load_records(dir: &Path) -> io::Result<Vec<RunRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(RECORD_SUFFIX))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p)?;
            serde_json::from_str(&text).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", p.display()))
            })
        })
        .collect()
}
