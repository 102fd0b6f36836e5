use serde::{Deserialize, Serialize};

use super::{predict_corpus, type_specific_accuracy, Aligner, TypeBucket, TypeReport};
use crate::neural::{train, EncoderConfig, FocalLossConfig, TokenizerSpec, TrainConfig};
use crate::phoneme::{Level, TokenSequence};
use crate::simulator::{simulate_corpus, SimulationConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRowSpec {
    pub name: String,
    /// Weights over repetition, insertion, deletion, substitution.
    pub proportions: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub rows: Vec<AblationRowSpec>,
}

impl Default for AblationSpec {
    fn default() -> Self {
        let row = |name: &str, proportions| AblationRowSpec { name: name.into(), proportions };
        AblationSpec {
            rows: vec![
                row("Average", [1.0, 1.0, 1.0, 1.0]),
                row("P1", [1.0, 1.5, 1.0, 1.5]),
                row("P2", [1.0, 1.5, 1.5, 1.0]),
                row("P3", [1.0, 1.0, 1.5, 1.5]),
                row("P4", [1.0, 1.0, 1.2, 1.0]),
            ],
        }
    }
}

impl AblationSpec {
    pub fn validate(&self) -> Result<(), String> {
        if self.rows.is_empty() {
            return Err("ablation needs at least one row".into());
        }
        for r in &self.rows {
            if r.proportions.iter().any(|p| !p.is_finite() || *p <= 0.0) {
                return Err(format!("row `{}` needs four positive proportions", r.name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub records_per_cell: usize,
    pub test_fraction: f64,
    pub level: Level,
    pub events_per_sentence: (usize, usize),
    pub max_repeat: usize,
    /// Shared by every row, so rows differ only in their proportions.
    pub seed: u64,
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub loss: FocalLossConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let sim = SimulationConfig::default();
        AblationConfig {
            records_per_cell: 5000,
            test_fraction: 0.1,
            level: sim.level,
            events_per_sentence: sim.events_per_sentence,
            max_repeat: sim.max_repeat,
            seed: 0,
            encoder: EncoderConfig::default(),
            train: TrainConfig::default(),
            loss: FocalLossConfig::default(),
        }
    }
}

impl AblationConfig {
    /// 1k-record cells.
    pub fn fast() -> Self {
        AblationConfig { records_per_cell: 1000, ..AblationConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub name: String,
    pub proportions: [f64; 4],
    pub report: Option<TypeReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationGrid {
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("proportion");
        for b in TypeBucket::ALL {
            out.push_str(&format!(",{b}"));
        }
        out.push_str(",status\n");
        for row in &self.rows {
            out.push_str(&row.name);
            match &row.report {
                Some(report) => {
                    for b in TypeBucket::ALL {
                        out.push_str(&format!(",{:.4}", report.accuracy(b)));
                    }
                    out.push_str(",ok\n");
                }
                None => {
                    out.push_str(&",failed".repeat(TypeBucket::ALL.len()));
                    let reason = row.error.as_deref().unwrap_or("").replace([',', '\n'], " ");
                    out.push_str(&format!(",failed: {reason}\n"));
                }
            }
        }
        out
    }
}

fn run_cell(texts: &[TokenSequence], proportions: [f64; 4], cfg: &AblationConfig) -> Result<TypeReport, String> {
    let sim = SimulationConfig {
        level: cfg.level,
        proportions,
        events_per_sentence: cfg.events_per_sentence,
        max_repeat: cfg.max_repeat,
        seed: cfg.seed,
    };
    let corpus = simulate_corpus(texts, &sim, cfg.records_per_cell).map_err(|e| e.to_string())?;
    let test_len = ((corpus.len() as f64 * cfg.test_fraction).round() as usize).clamp(1, corpus.len().saturating_sub(1).max(1));
    let (train_set, test_set) = corpus.split_at(corpus.len() - test_len);
    let words: Vec<&str> = train_set.iter().flat_map(|r| r.reference.iter().chain(r.dysfluent.iter())).map(|t| t.text()).collect();
    let tokenizer = TokenizerSpec::for_level(cfg.level, words);
    let ckpt = train(train_set, tokenizer, &cfg.encoder, &cfg.train, &cfg.loss).map_err(|e| e.to_string())?;
    let preds = predict_corpus(test_set, Aligner::Neural(&ckpt)).map_err(|e| e.to_string())?;
    type_specific_accuracy(&preds, test_set).map_err(|e| e.to_string())
}

/// Simulates, trains and evaluates one cell per row. A failing cell is
/// recorded and the remaining rows still run.
pub fn run_ablation(
    texts: &[TokenSequence],
    spec: &AblationSpec,
    cfg: &AblationConfig,
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationGrid, String> {
    spec.validate()?;
    let mut rows = Vec::with_capacity(spec.rows.len());
    for r in &spec.rows {
        let (report, error) = match run_cell(texts, r.proportions, cfg) {
            Ok(report) => (Some(report), None),
            Err(e) => (None, Some(e)),
        };
        let row = AblationRow { name: r.name.clone(), proportions: r.proportions, report, error };
        on_row(&row);
        rows.push(row);
    }
    Ok(AblationGrid { rows })
}
