//! Report bundle: machine-readable outputs written atomically to a run
//! directory. JSON carries structured traces; CSV carries tables meant for
//! external plotting.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::RunConfig;

pub const METADATA_FILE: &str = "run_metadata.json";

/// Run provenance: enough to reproduce the run exactly (the config echo plus
/// the seeds inside it), plus version and timing. Wall-clock is the only
/// field that varies between identical runs, which is why reproducibility
/// checks compare bundles through [`bundle_fingerprint`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: String,
    pub wall_clock_ms: u128,
    pub config: RunConfig,
}

/// Paths of everything one command wrote.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub out_dir: PathBuf,
    pub files: BTreeMap<String, PathBuf>,
}

impl ReportBundle {
    pub fn new(out_dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        Ok(ReportBundle {
            out_dir: out_dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    /// Write a file under the bundle directory via a temporary name and an
    /// atomic rename, so readers never observe partial content.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<&Path> {
        let final_path = self.out_dir.join(name);
        let tmp_path = self.out_dir.join(format!(".tmp-{name}"));
        std::fs::write(&tmp_path, bytes)?;
        std::fs::rename(&tmp_path, &final_path)?;
        self.files.insert(name.to_string(), final_path);
        Ok(self.files.get(name).expect("just inserted"))
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<&Path> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Numeric(format!("serialization failed: {e}")))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(
        &mut self,
        command: &str,
        config: &RunConfig,
        elapsed: Duration,
    ) -> Result<()> {
        let meta = RunMetadata {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_ms: elapsed.as_millis(),
            config: config.clone(),
        };
        self.write_json(METADATA_FILE, &meta)?;
        Ok(())
    }
}

/// CSV writer with deterministic float formatting (shortest round-trip
/// decimal via the standard formatter).
pub struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer
            .write_record(header)
            .map_err(|e| Error::Numeric(format!("csv write failed: {e}")))?;
        Ok(CsvTable { writer })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.writer
            .write_record(fields)
            .map_err(|e| Error::Numeric(format!("csv write failed: {e}")))
    }

    pub fn into_bytes(self) -> Result<Vec<u8>> {
        self.writer
            .into_inner()
            .map_err(|e| Error::Numeric(format!("csv flush failed: {e}")))
    }
}

/// Render a sensor set as `{1,8}`.
pub fn format_set<'a>(ids: impl IntoIterator<Item = &'a usize>) -> String {
    let inner = ids
        .into_iter()
        .map(|id| id.to_string())
        .collect::<Vec<_>>()
        .join(",");
    format!("{{{inner}}}")
}

/// Deterministic content of a bundle directory: every regular file except
/// the metadata (whose wall-clock legitimately varies), sorted by name.
/// Two runs with identical config and seeds must produce identical
/// fingerprints.
pub fn bundle_fingerprint(dir: &Path) -> Result<Vec<(String, Vec<u8>)>> {
    let mut entries = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        if !entry.file_type()?.is_file() || name == METADATA_FILE {
            continue;
        }
        entries.push((name, std::fs::read(entry.path())?));
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(entries)
}

/// The metadata echo with the fields that legitimately differ between
/// otherwise-identical runs cleared: the wall clock and the output
/// directory (which must differ to compare two bundles side by side).
pub fn metadata_without_timing(dir: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(dir.join(METADATA_FILE))?;
    let mut value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(obj) = value.as_object_mut() {
        obj.remove("wall_clock_ms");
        if let Some(config) = obj.get_mut("config").and_then(|c| c.as_object_mut()) {
            config.remove("out-dir");
        }
    }
    Ok(value)
}
