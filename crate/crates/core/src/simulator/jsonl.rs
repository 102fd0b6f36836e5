//! JSON Lines corpus format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{alignment_from_labels, CorpusRecord, DysfluencyEvent, DysfluencyType, JointLabelEncoding};
use crate::phoneme::{Level, Token, TokenSequence};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Serialize, Deserialize)]
struct EventRow {
    kind: DysfluencyType,
    ref_index: usize,
    #[serde(default)]
    inserted: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    detail: String,
}

#[derive(Serialize, Deserialize)]
struct RecordRow {
    id: u64,
    level: Level,
    #[serde(rename = "ref")]
    reference: String,
    dys: String,
    ref_labels: Vec<u8>,
    dys_labels: Vec<u8>,
    #[serde(default)]
    events: Vec<EventRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
}

pub fn record_to_json(record: &CorpusRecord) -> String {
    let row = RecordRow {
        id: record.id,
        level: record.level,
        reference: record.reference.to_string(),
        dys: record.dysfluent.to_string(),
        ref_labels: record.labels.ref_labels.clone(),
        dys_labels: record.labels.dys_labels.clone(),
        events: record
            .events
            .iter()
            .map(|e| EventRow {
                kind: e.kind,
                ref_index: e.ref_index,
                inserted: e.inserted_tokens.iter().map(Token::text).collect::<Vec<_>>().join(" "),
                detail: e.detail.clone(),
            })
            .collect(),
        warnings: record.warnings.clone(),
    };
    serde_json::to_string(&row).expect("record serializes")
}

pub fn record_from_json(text: &str) -> Result<CorpusRecord, String> {
    let row: RecordRow = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let reference = TokenSequence::parse(row.level, &row.reference).map_err(|e| e.to_string())?;
    let dysfluent = TokenSequence::parse(row.level, &row.dys).map_err(|e| e.to_string())?;
    let labels = JointLabelEncoding { ref_labels: row.ref_labels, dys_labels: row.dys_labels };
    let gold = alignment_from_labels(&labels, &reference, &dysfluent).map_err(|e| e.to_string())?;
    let mut events = Vec::with_capacity(row.events.len());
    for e in row.events {
        if e.ref_index >= reference.len() {
            return Err(format!("event index {} outside reference", e.ref_index));
        }
        let inserted_tokens = TokenSequence::parse(row.level, &e.inserted).map_err(|err| err.to_string())?;
        events.push(DysfluencyEvent {
            kind: e.kind,
            ref_index: e.ref_index,
            inserted_tokens: inserted_tokens.tokens().to_vec(),
            detail: e.detail,
        });
    }
    Ok(CorpusRecord {
        id: row.id,
        level: row.level,
        reference,
        dysfluent,
        labels,
        gold,
        events,
        warnings: row.warnings,
    })
}

pub fn write_corpus<W: Write>(mut out: W, records: &[CorpusRecord]) -> std::io::Result<()> {
    for r in records {
        writeln!(out, "{}", record_to_json(r))?;
    }
    out.flush()
}

/// Reads records, reporting the 1-based line of the first malformed entry.
pub fn read_corpus<R: BufRead>(input: R) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = record_from_json(&line).map_err(|message| CorpusError::Malformed { line: i + 1, message })?;
        records.push(record);
    }
    Ok(records)
}
