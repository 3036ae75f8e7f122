use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub problem_file: Option<String>,
    pub problem_sha256: Option<String>,
    pub overrides: BTreeMap<String, String>,
    pub seed: Option<u64>,
    pub version: String,
    pub timestamp: String,
    pub outputs: Vec<String>,
}

/// Collects the files a command writes into one output directory and
/// finishes with the manifest that lists them.
pub struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn bytes(&mut self, name: &str, data: &[u8]) -> Result<PathBuf> {
        let target = self.path(name);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(data)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&target)
            .with_context(|| format!("writing {}", target.display()))?;
        self.written.push(name.to_string());
        Ok(target)
    }

    pub fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.bytes(name, text.as_bytes())
    }

    /// CSV with an explicit header; rows are numeric records.
    pub fn table(&mut self, name: &str, header: &[String], rows: &[Vec<f64>]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.serialize(r)?;
        }
        let data = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.bytes(name, &data)
    }

    /// CSV with the header taken from the field names of `S`.
    pub fn records<S: Serialize>(&mut self, name: &str, rows: &[S]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let data = w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?;
        self.bytes(name, &data)
    }

    pub fn finish(mut self, mut manifest: RunManifest) -> Result<PathBuf> {
        manifest.outputs = std::mem::take(&mut self.written);
        let name = format!("manifest-{}.json", manifest.command);
        self.json(&name, &manifest)
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let data = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&data)))
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
