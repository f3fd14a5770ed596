//! On-disk run artifacts: the append-only run log and curated-id sets.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use syncanim::metrics::MetricReport;
use syncanim::{Error, Result};

pub const RUN_SCHEMA_VERSION: u32 = 1;
pub const CURATED_SCHEMA_VERSION: u32 = 1;

/// One completed run. Together with the config file and the benchmark seed,
/// a record pins everything needed to regenerate its artifacts bit for bit
/// (wall time and timestamp aside, which describe the run, not the result).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub schema_version: u32,
    /// Subcommand, or `experiment:<preset>:<cell>` for preset cells.
    pub command: String,
    /// FNV-1a hash of the resolved run configuration.
    pub config_hash: String,
    pub seed: u64,
    /// Checkpoint the run wrote (trainers) or read (eval), if any.
    pub checkpoint: Option<String>,
    /// Metrics, for runs that evaluated.
    pub metrics: Option<MetricReport>,
    pub wall_seconds: f64,
    pub timestamp_unix: u64,
    /// Cell parameters and other free-form context (K, radius, corpus kind).
    pub extra: BTreeMap<String, String>,
}

impl RunRecord {
    pub fn new(command: &str, config_hash: &str, seed: u64) -> RunRecord {
        RunRecord {
            schema_version: RUN_SCHEMA_VERSION,
            command: command.to_string(),
            config_hash: config_hash.to_string(),
            seed,
            checkpoint: None,
            metrics: None,
            wall_seconds: 0.0,
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            extra: BTreeMap::new(),
        }
    }
}

/// Append one record as a JSON line. The log is never rewritten in place.
pub fn append_run(path: &Path, record: &RunRecord) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let line = serde_json::to_string(record)?;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

pub fn read_runs(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "run log {} not found; training, eval, and experiment runs append to it",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (i, line) in std::fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: RunRecord = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if rec.schema_version != RUN_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "{} line {}: run schema {} unsupported",
                path.display(),
                i + 1,
                rec.schema_version
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Output of `curate`: the ids a trainer should read from the benchmark
/// store. Scene-split salvage segments are shorter than a training window,
/// so they are counted but not listed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CuratedSet {
    pub schema_version: u32,
    /// Split the pipeline ran over.
    pub split: String,
    /// Kept ids, loadable from the benchmark clip store.
    pub kept_ids: Vec<String>,
    /// Salvaged sub-clip segments (kept by curation, unusable for training).
    pub n_split_segments: usize,
}

impl CuratedSet {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<CuratedSet> {
        if !path.exists() {
            return Err(Error::Dependency(format!(
                "curated set {} not found; run `syncanim curate` first",
                path.display()
            )));
        }
        let set: CuratedSet = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if set.schema_version != CURATED_SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "curated set schema {} unsupported (expected {CURATED_SCHEMA_VERSION})",
                set.schema_version
            )));
        }
        Ok(set)
    }
}
