//! Resolved per-subcommand settings and the config file loader.
//!
//! Values come from flags, then the subcommand's table in the config file,
//! then the defaults below.

use std::fs;
use std::path::{Path, PathBuf};

use dysalign::evalkit::AblationConfig;
use dysalign::neural::{EncoderConfig, FocalLossConfig, TrainConfig};
use dysalign::phoneme::Level;
use dysalign::simulator::SimulationConfig;
use dysalign::sta::{DurationModel, EmissionNoise};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_ENV: &str = "DYSALIGN_CONFIG";

/// Number of built-in demo sentences used when no input file is given.
pub const DEMO_SENTENCES: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    pub input: Option<PathBuf>,
    pub demo_sentences: usize,
    pub n: usize,
    pub out: Option<PathBuf>,
    pub simulation: SimulationConfig,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            input: None,
            demo_sentences: DEMO_SENTENCES,
            n: 1000,
            out: None,
            simulation: SimulationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainCmdConfig {
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub level: Option<Level>,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub loss: FocalLossConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub method: String,
    pub model: Option<PathBuf>,
    #[serde(rename = "ref")]
    pub reference: Option<String>,
    pub dys: Option<String>,
    pub level: Level,
    pub format: String,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            method: "soft".into(),
            model: None,
            reference: None,
            dys: None,
            level: Level::Phoneme,
            format: "pretty".into(),
            corpus: None,
            out: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StaConfig {
    pub corpus: Option<PathBuf>,
    pub aligner: String,
    pub model: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub dump: Option<PathBuf>,
    pub noise: EmissionNoise,
    pub durations: DurationModel,
}

impl Default for StaConfig {
    fn default() -> Self {
        StaConfig {
            corpus: None,
            aligner: "soft".into(),
            model: None,
            report: None,
            dump: None,
            noise: EmissionNoise::default(),
            durations: DurationModel::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub pred: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub format: String,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { pred: None, gold: None, out: None, format: "json".into(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationCmdConfig {
    pub spec: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub input: Option<PathBuf>,
    pub demo_sentences: usize,
    pub ablation: AblationConfig,
}

impl Default for AblationCmdConfig {
    fn default() -> Self {
        AblationCmdConfig {
            spec: None,
            out: None,
            input: None,
            demo_sentences: DEMO_SENTENCES,
            ablation: AblationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatConfig {
    pub format: String,
    pub seed: u64,
}

impl FormatConfig {
    pub fn with_format(format: &str) -> Self {
        FormatConfig { format: format.into(), seed: 0 }
    }
}

/// Picks the config file: the explicit path, else the environment variable.
pub fn config_path(explicit: Option<&Path>) -> Option<PathBuf> {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

/// Loads the table for `subcommand`, or `base` when there is no file or the
/// file has no such table.
///
/// A `.json` file is read as a run manifest and must belong to the same
/// subcommand; anything else is TOML with one table per subcommand.
pub fn load_section<T: DeserializeOwned + Serialize>(
    path: Option<&Path>,
    subcommand: &str,
    base: T,
) -> Result<T, CliError> {
    let Some(path) = path else { return Ok(base) };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
    let bad = |e: &dyn std::fmt::Display| CliError::Data(format!("config {}: {e}", path.display()));
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| bad(&e))?;
        let owner = value.get("subcommand").and_then(|v| v.as_str()).unwrap_or_default();
        if owner != subcommand {
            return Err(CliError::Usage(format!(
                "manifest {} was written by `{owner}`, not `{subcommand}`",
                path.display()
            )));
        }
        let section = value.get("config").cloned().unwrap_or(serde_json::Value::Null);
        return merge_json(base, section).map_err(|e| bad(&e));
    }
    let table: toml::Table = text.parse().map_err(|e| bad(&e))?;
    match table.get(subcommand) {
        Some(section) => {
            let section = serde_json::to_value(section).map_err(|e| bad(&e))?;
            merge_json(base, section).map_err(|e| bad(&e))
        }
        None => Ok(base),
    }
}

/// Overlays the keys of `patch` onto `base`, recursing into tables.
fn merge_json<T: DeserializeOwned + Serialize>(base: T, patch: serde_json::Value) -> Result<T, serde_json::Error> {
    let mut value = serde_json::to_value(base)?;
    overlay(&mut value, patch);
    serde_json::from_value(value)
}

fn overlay(target: &mut serde_json::Value, patch: serde_json::Value) {
    match (target, patch) {
        (serde_json::Value::Object(t), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match t.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        t.insert(k, v);
                    }
                }
            }
        }
        (_, serde_json::Value::Null) => {}
        (slot, v) => *slot = v,
    }
}

pub fn parse_list<const N: usize>(text: &str, what: &str) -> Result<[f64; N], CliError> {
    let parts: Vec<&str> = text.split([',', ':']).map(str::trim).collect();
    if parts.len() != N {
        return Err(CliError::Usage(format!("{what}: expected {N} comma-separated numbers, got `{text}`")));
    }
    let mut out = [0.0; N];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part
            .parse()
            .map_err(|e| CliError::Usage(format!("{what}: bad number `{part}`: {e}")))?;
    }
    Ok(out)
}

pub fn parse_range(text: &str, what: &str) -> Result<(usize, usize), CliError> {
    let bad = || CliError::Usage(format!("{what}: expected MIN,MAX, got `{text}`"));
    let (a, b) = text.split_once([',', ':']).ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}
