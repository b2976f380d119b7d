//! Run manifests: a sorted key=value record of a command's inputs (by
//! content hash), configuration, and artifacts (by content hash), written
//! next to the outputs. A rerun with identical inputs and configuration
//! produces a byte-identical manifest. Timing measurements deliberately live
//! in a separate CSV so they never perturb the manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::pipeline::config::PipelineConfig;

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    Ok(sha256_bytes(&std::fs::read(path)?))
}

/// Sorted description of one run.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(command: &str) -> Manifest {
        let mut m = Manifest::default();
        m.insert("command", command);
        m.insert("version", env!("CARGO_PKG_VERSION"));
        m.insert("status", "ok");
        m
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn mark_failed(&mut self, stage: impl AsRef<str>) {
        self.insert("status", format!("failed at {}", stage.as_ref()));
    }

    pub fn insert_config(&mut self, config: &PipelineConfig) {
        for (k, v) in config.echo() {
            self.insert(format!("config.{k}"), v);
        }
    }

    /// Record an input file by content hash.
    pub fn insert_input(&mut self, name: &str, path: impl AsRef<Path>) -> Result<()> {
        let hash = sha256_file(&path)?;
        self.insert(format!("input.{name}"), format!("sha256:{hash}"));
        Ok(())
    }

    /// Record an artifact (a file under the output directory) by hash.
    pub fn insert_artifact(&mut self, out_dir: &Path, relative: &str) -> Result<()> {
        let hash = sha256_file(out_dir.join(relative))?;
        self.insert(format!("artifact.{relative}"), format!("sha256:{hash}"));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("facepuppet manifest v1\n");
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Write to `manifest.txt` in the output directory and return the
    /// rendered text's hash (the run's identity).
    pub fn write(&self, out_dir: &Path) -> Result<String> {
        let text = self.render();
        std::fs::write(out_dir.join("manifest.txt"), &text)?;
        Ok(sha256_bytes(text.as_bytes()))
    }
}

/// Append-only timing sink written as CSV; one per run, separate from the
/// manifest so wall-clock noise never touches the deterministic record.
#[derive(Clone, Debug)]
pub struct Timings {
    header: String,
    rows: Vec<String>,
}

impl Timings {
    pub fn new(header: &str) -> Timings {
        Timings {
            header: header.to_string(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: String) {
        self.rows.push(row);
    }

    pub fn write(&self, out_dir: &Path) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "{}", self.header);
        for row in &self.rows {
            let _ = writeln!(text, "{row}");
        }
        std::fs::write(out_dir.join("timings.csv"), text)?;
        Ok(())
    }
}
