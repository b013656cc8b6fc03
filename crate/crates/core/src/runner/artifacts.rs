use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forcing::{FlowGroupMask, ForcingSeries, SubsetCounts, SubsetMask};
use crate::train::TrainRun;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub native_steps: usize,
    pub spinup_steps: usize,
    pub first_date: String,
    pub last_date: String,
    pub water_years: (i32, i32),
    pub counts: SubsetCounts,
    pub group_sizes: Vec<usize>,
    pub group_thresholds: Vec<f64>,
    pub config_hash: String,
    pub version: String,
}

/// Everything later commands need from ingestion, in one file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestArtifact {
    pub summary: IngestSummary,
    /// Full series including spin-up.
    pub series: ForcingSeries,
    pub mask: SubsetMask,
    pub groups: FlowGroupMask,
}

/// Points at the selected run file of a multi-seed training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMarker {
    pub variant: String,
    pub seed: u64,
    pub file: String,
    pub selection_kge_ss: f64,
    pub runs: usize,
    pub failures: Vec<(u64, String)>,
    pub config_hash: String,
    pub version: String,
}

pub(crate) fn ingest_path(root: &Path) -> PathBuf {
    root.join("ingest").join("ingest.json")
}

pub(crate) fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn load_ingest(root: &Path) -> Result<IngestArtifact> {
    read_json(&ingest_path(root))
}

/// Reads a run file, or the selected run of a run directory.
pub fn load_run(path: &Path) -> Result<TrainRun> {
    if !path.exists() {
        return Err(Error::MissingLineage(path.to_path_buf()));
    }
    if path.is_dir() {
        let marker: SelectionMarker = read_json(&path.join("selected.json"))?;
        return read_json(&path.join(marker.file));
    }
    read_json(path)
}

/// Header line carried by every plain-text artifact.
pub(crate) fn header(hash: &str) -> String {
    format!("# config_hash={hash} version={VERSION}\n")
}

/// `{:.16e}` keeps 17 significant digits, enough to reload every bit.
pub(crate) fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn lines<I: IntoIterator<Item = String>>(hash: &str, items: I) -> String {
    let mut out = header(hash);
    for item in items {
        let _ = writeln!(out, "{item}");
    }
    out
}
