use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::align::ClassicMethod;
use crate::neural::ModelCheckpoint;
use crate::phoneme::TokenSequence;
use crate::simulator::{CorpusRecord, JointLabelEncoding};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub id: u64,
    pub labels: JointLabelEncoding,
}

#[derive(Debug, Clone, Copy)]
pub enum Aligner<'a> {
    Classic(ClassicMethod),
    Neural(&'a ModelCheckpoint),
}

impl Aligner<'_> {
    pub fn name(&self) -> String {
        match self {
            Aligner::Classic(m) => m.to_string(),
            Aligner::Neural(_) => "neural".into(),
        }
    }

    pub fn align(&self, reference: &TokenSequence, dysfluent: &TokenSequence) -> Result<JointLabelEncoding, String> {
        match self {
            Aligner::Classic(m) => m.align(reference, dysfluent).map(|r| r.labels).map_err(|e| e.to_string()),
            Aligner::Neural(ckpt) => ckpt.predict(reference, dysfluent).map(|p| p.labels).map_err(|e| e.to_string()),
        }
    }
}

pub fn predict_corpus(records: &[CorpusRecord], aligner: Aligner<'_>) -> Result<Vec<PredictionRecord>, EvalError> {
    records
        .iter()
        .map(|r| {
            let labels = aligner
                .align(&r.reference, &r.dysfluent)
                .map_err(|message| EvalError::Aligner { id: r.id, message })?;
            Ok(PredictionRecord { id: r.id, labels })
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct Row {
    id: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    method: String,
    ref_labels: Vec<u8>,
    dys_labels: Vec<u8>,
}

pub fn write_predictions<W: Write>(mut out: W, method: &str, predictions: &[PredictionRecord]) -> std::io::Result<()> {
    for p in predictions {
        let row = Row {
            id: p.id,
            method: method.to_string(),
            ref_labels: p.labels.ref_labels.clone(),
            dys_labels: p.labels.dys_labels.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&row).expect("row serializes"))?;
    }
    out.flush()
}

pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<PredictionRecord>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let malformed = |message: String| EvalError::Malformed { line: i + 1, message };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let labels = JointLabelEncoding { ref_labels: row.ref_labels, dys_labels: row.dys_labels };
        labels
            .check(labels.ref_labels.len(), labels.dys_labels.len())
            .map_err(|e| malformed(e.to_string()))?;
        out.push(PredictionRecord { id: row.id, labels });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip_and_line_numbers() {
        let preds = vec![
            PredictionRecord { id: 4, labels: JointLabelEncoding { ref_labels: vec![1, 2], dys_labels: vec![0, 1] } },
            PredictionRecord { id: 9, labels: JointLabelEncoding::identity(3) },
        ];
        let mut buf = Vec::new();
        write_predictions(&mut buf, "hard", &preds).unwrap();
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), preds);
        let text = format!("{}\n{{\"id\":1,\"ref_labels\":[1],\"dys_labels\":[0]}}\n", String::from_utf8(buf).unwrap().lines().next().unwrap());
        assert!(matches!(read_predictions(text.as_bytes()), Err(EvalError::Malformed { line: 2, .. })));
    }
}
