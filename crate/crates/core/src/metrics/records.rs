use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `sum(probs) == 1`.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Tags {
    pub split: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corruption: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub severity: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temporal: Option<bool>,
    #[serde(default)]
    pub anomaly: bool,
}

impl Tags {
    /// Sequences default to temporal when the flag is absent.
    pub fn is_temporal(&self) -> bool {
        self.temporal.unwrap_or(true)
    }
}

/// One model prediction with its evaluation tags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionRecord {
    pub id: String,
    pub label: Option<usize>,
    pub probs: Vec<f64>,
    pub tags: Tags,
}

/// Index of the largest probability; ties go to the smallest index.
pub fn argmax(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
        }
    }
    best
}

impl PredictionRecord {
    pub fn predicted(&self) -> usize {
        argmax(&self.probs)
    }

    pub fn confidence(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `None` for unlabeled records.
    pub fn is_correct(&self) -> Option<bool> {
        self.label.map(|l| l == self.predicted())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    id: String,
    #[serde(default)]
    label: Option<i64>,
    #[serde(default)]
    logits: Option<Vec<f64>>,
    #[serde(default)]
    probs: Option<Vec<f64>>,
    tags: Tags,
}

/// Softmax with the row maximum subtracted first.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn convert(raw: RawRecord) -> std::result::Result<PredictionRecord, String> {
    let probs = match (raw.logits, raw.probs) {
        (Some(_), Some(_)) => return Err("record has both logits and probs".into()),
        (None, None) => return Err("record has neither logits nor probs".into()),
        (Some(logits), None) => {
            if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
                return Err("logits must be a nonempty list of finite numbers".into());
            }
            softmax(&logits)
        }
        (None, Some(probs)) => probs,
    };
    let label = match raw.label {
        None => None,
        Some(l) if l >= 0 => Some(l as usize),
        Some(l) => return Err(format!("label must be >= 0, got {l}")),
    };
    Ok(PredictionRecord {
        id: raw.id,
        label,
        probs,
        tags: raw.tags,
    })
}

/// Checks per-record and whole-log invariants.
pub fn validate(records: &[PredictionRecord]) -> Result<()> {
    let mut classes = None;
    let mut ids = BTreeSet::new();
    for r in records {
        let ctx = |msg: String| Error::Schema(format!("record {:?}: {msg}", r.id));
        if !ids.insert(r.id.as_str()) {
            return Err(ctx("duplicate id".into()));
        }
        if r.probs.is_empty() {
            return Err(ctx("empty probability vector".into()));
        }
        if r.probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(ctx("probabilities must be finite and nonnegative".into()));
        }
        let sum: f64 = r.probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(ctx(format!("probabilities sum to {sum}")));
        }
        match classes {
            None => classes = Some(r.probs.len()),
            Some(n) if n != r.probs.len() => {
                return Err(ctx(format!("has {} classes, log has {n}", r.probs.len())))
            }
            _ => {}
        }
        match r.label {
            None if !r.tags.anomaly => return Err(ctx("in-distribution record without label".into())),
            Some(l) if l >= r.probs.len() => {
                return Err(ctx(format!("label {l} out of range for {} classes", r.probs.len())))
            }
            _ => {}
        }
        if let Some(s) = r.tags.severity {
            if !(1..=5).contains(&s) {
                return Err(ctx(format!("severity {s} outside 1..=5")));
            }
        }
        if r.tags.frame_index == Some(0) {
            return Err(ctx("frame_index starts at 1".into()));
        }
    }
    Ok(())
}

/// Reads a JSON Lines prediction log, converts logits to probabilities,
/// validates, and returns records sorted by id.
pub fn ingest_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let record = convert(raw).map_err(|m| Error::Schema(format!("{}:{}: {m}", path.display(), i + 1)))?;
        records.push(record);
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    validate(&records)?;
    Ok(records)
}
