use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::error::CliError;

/// Record of one run, written next to its output as `<out>.manifest.json`.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub wall_time_s: f64,
}

pub struct ManifestBuilder {
    subcommand: String,
    started: Instant,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<PathBuf>,
}

impl ManifestBuilder {
    pub fn start(subcommand: &str) -> Self {
        ManifestBuilder { subcommand: subcommand.into(), started: Instant::now(), seeds: BTreeMap::new(), inputs: Vec::new() }
    }

    pub fn seed(&mut self, name: &str, value: u64) -> &mut Self {
        self.seeds.insert(name.into(), value);
        self
    }

    pub fn input(&mut self, path: Option<&Path>) -> &mut Self {
        self.inputs.extend(path.map(Path::to_path_buf));
        self
    }

    /// Writes the manifest next to `output`; does nothing when the output went to stdout.
    pub fn finish(&self, config: &impl Serialize, output: Option<&Path>) -> Result<(), CliError> {
        let Some(output) = output else { return Ok(()) };
        let manifest = RunManifest {
            subcommand: self.subcommand.clone(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: serde_json::to_value(config).map_err(CliError::internal)?,
            seeds: self.seeds.clone(),
            inputs: self.inputs.clone(),
            outputs: vec![output.to_path_buf()],
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest).map_err(CliError::internal)?;
        text.push('\n');
        write_atomic(&manifest_path(output), text.as_bytes())
    }
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))
}
