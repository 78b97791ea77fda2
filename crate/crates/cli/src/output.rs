//! Report and table writers.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::config::{ExperimentConfig, Kind};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    format_version: u32,
    command: &'static str,
    config: &'a ExperimentConfig,
    report: &'a T,
}

pub struct OutputDir {
    dir: PathBuf,
    kind: Kind,
}

impl OutputDir {
    pub fn create(dir: &Path, kind: Kind) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            kind,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// `<kind>.config.toml`: the resolved configuration, reusable as input.
    pub fn echo_config(&self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let path = self.path(&format!("{}.config.toml", self.kind.name()));
        let text = format!("# format_version = {FORMAT_VERSION}\n{}", cfg.to_toml()?);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    /// `<kind>.json` with the format version and resolved config embedded.
    pub fn report<T: Serialize>(&self, cfg: &ExperimentConfig, report: &T) -> Result<PathBuf> {
        let path = self.path(&format!("{}.json", self.kind.name()));
        let envelope = Envelope {
            format_version: FORMAT_VERSION,
            command: self.kind.name(),
            config: cfg,
            report,
        };
        let mut text = serde_json::to_string_pretty(&envelope)?;
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    pub fn table(&self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

/// Shortest round-trip decimal; empty for missing values.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}
