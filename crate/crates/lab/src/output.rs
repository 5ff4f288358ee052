//! CSV and JSON writers with a provenance record in every file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::LabError;

pub const TOOL: &str = env!("CARGO_PKG_NAME");
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_sha256: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self { tool: TOOL, version: VERSION, config_sha256: cfg.sha256(), seed: cfg.seed }
    }

    fn comment(&self) -> String {
        format!("# tool={} version={} config_sha256={} seed={}\n", self.tool, self.version, self.config_sha256, self.seed)
    }
}

/// `%.16e`: 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// In-memory CSV: provenance comment, header row, then data rows.
pub struct Csv {
    text: String,
    width: usize,
}

impl Csv {
    pub fn new(prov: &Provenance, header: &[String]) -> Self {
        let mut text = prov.comment();
        text.push_str(&header.join(","));
        text.push('\n');
        Self { text, width: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.width);
        self.text.push_str(&cells.join(","));
        self.text.push('\n');
    }

    pub fn into_string(self) -> String {
        self.text
    }
}

/// Numbered column names `prefix_0, ..., prefix_{n-1}`.
pub fn columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}_{i}")).collect()
}

pub fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, LabError> {
    fs::create_dir_all(dir).map_err(|source| LabError::Io { path: dir.to_path_buf(), source })?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|source| LabError::Io { path: path.clone(), source })?;
    Ok(path)
}

/// JSON document: provenance and config echo first, then the payload.
#[derive(Serialize)]
pub struct Document<'a, T: Serialize> {
    #[serde(flatten)]
    pub provenance: &'a Provenance,
    pub config: Vec<String>,
    pub result: &'a T,
}

pub fn json<T: Serialize>(prov: &Provenance, cfg: &ExperimentConfig, result: &T) -> String {
    let doc = Document {
        provenance: prov,
        config: cfg.experiment_entries().map(|(k, v)| format!("{k} = {v}")).collect(),
        result,
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("documents contain only serializable data");
    s.push('\n');
    s
}
