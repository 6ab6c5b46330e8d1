use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::calibration::rms_calibration_error;
use super::consistency::{mfr, mt5d, ConsistencyReport};
use super::corruption::{classification_error, mce, CorruptionReport, Normalizers};
use super::detection::{aupr, auroc, msp_score};
use super::records::PredictionRecord;
use crate::error::Result;

/// Conventions written into every report header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub detection_score: String,
    pub positive_class: String,
    pub argmax_ties: String,
    pub rates: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            detection_score: "msp (higher = in-distribution)".into(),
            positive_class: "anomaly".into(),
            argmax_ties: "smallest class index".into(),
            rates: "fractions in [0, 1]".into(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub records: usize,
    pub classes: usize,
    pub clean: usize,
    pub corrupted: usize,
    pub sequence: usize,
    pub anomaly: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Option<usize>,
    pub per_split: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScores {
    pub auroc: f64,
    pub aupr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub conventions: Conventions,
    pub counts: Counts,
    pub clean_error: Option<f64>,
    pub mce: Option<CorruptionReport>,
    pub mfr: Option<ConsistencyReport>,
    pub mt5d: Option<ConsistencyReport>,
    pub rms_calibration: CalibrationReport,
    /// Mean over anomaly splits.
    pub auroc: Option<f64>,
    pub aupr: Option<f64>,
    pub detection_per_split: BTreeMap<String, DetectionScores>,
}

/// Which metric family a record feeds.
enum Role {
    Clean,
    Corrupted,
    Sequence,
    Anomaly,
}

fn role(r: &PredictionRecord) -> Role {
    if r.tags.anomaly {
        Role::Anomaly
    } else if r.tags.sequence_id.is_some() {
        Role::Sequence
    } else if r.tags.corruption.is_some() {
        Role::Corrupted
    } else {
        Role::Clean
    }
}

/// Computes every metric the log supports. Records should already be
/// validated (see `ingest_predictions`); results do not depend on order.
///
/// Partition: anomaly-tagged records feed detection; records with a
/// `sequence_id` feed mFR/mT5D; other records with a corruption tag feed mCE;
/// the rest are clean. Detection compares clean MSP scores against each
/// anomaly split. Calibration is reported per split over labeled,
/// non-sequence records.
pub fn evaluate(
    records: &[PredictionRecord],
    normalizers: Option<&Normalizers>,
    bins: Option<usize>,
) -> Result<EvalReport> {
    let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let (mut clean, mut corrupted, mut sequence) = (Vec::new(), Vec::new(), Vec::new());
    let mut anomalies: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    let mut by_split: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in &sorted {
        match role(r) {
            Role::Anomaly => anomalies.entry(&r.tags.split).or_default().push(r),
            Role::Sequence => sequence.push(*r),
            Role::Corrupted => corrupted.push(*r),
            Role::Clean => clean.push(*r),
        }
        if matches!(role(r), Role::Clean | Role::Corrupted) {
            by_split.entry(&r.tags.split).or_default().push(r);
        }
    }

    let classes = sorted.first().map_or(0, |r| r.probs.len());
    let counts = Counts {
        records: sorted.len(),
        classes,
        clean: clean.len(),
        corrupted: corrupted.len(),
        sequence: sequence.len(),
        anomaly: anomalies.values().map(Vec::len).sum(),
    };

    let clean_error = if clean.is_empty() {
        None
    } else {
        Some(classification_error(clean.iter().copied())?)
    };
    let mce = if corrupted.is_empty() {
        None
    } else {
        Some(mce(&corrupted, normalizers)?)
    };
    let (mfr, mt5d) = if sequence.is_empty() {
        (None, None)
    } else {
        let t5 = if classes >= 5 { Some(mt5d(&sequence)?) } else { None };
        (Some(mfr(&sequence)?), t5)
    };

    let mut rms_calibration = CalibrationReport {
        bins,
        per_split: BTreeMap::new(),
    };
    for (split, rs) in &by_split {
        rms_calibration
            .per_split
            .insert((*split).to_owned(), rms_calibration_error(rs, bins)?);
    }

    let mut detection_per_split = BTreeMap::new();
    if !clean.is_empty() {
        let in_scores: Vec<f64> = clean.iter().map(|r| msp_score(r)).collect();
        for (split, rs) in &anomalies {
            let out: Vec<f64> = rs.iter().map(|r| msp_score(r)).collect();
            detection_per_split.insert(
                (*split).to_owned(),
                DetectionScores {
                    auroc: auroc(&in_scores, &out)?,
                    aupr: aupr(&in_scores, &out)?,
                },
            );
        }
    }
    let mean = |f: fn(&DetectionScores) -> f64| {
        (!detection_per_split.is_empty()).then(|| {
            detection_per_split.values().map(f).sum::<f64>() / detection_per_split.len() as f64
        })
    };
    let (auroc, aupr) = (mean(|d| d.auroc), mean(|d| d.aupr));

    Ok(EvalReport {
        conventions: Conventions::default(),
        counts,
        clean_error,
        mce,
        mfr,
        mt5d,
        rms_calibration,
        auroc,
        aupr,
        detection_per_split,
    })
}

impl EvalReport {
    /// True when every metric family produced a value.
    pub fn is_complete(&self) -> bool {
        self.clean_error.is_some()
            && self.mce.is_some()
            && self.mfr.is_some()
            && self.mt5d.is_some()
            && !self.rms_calibration.per_split.is_empty()
            && self.auroc.is_some()
            && self.aupr.is_some()
    }

    /// Every rate that must lie in `[0, 1]`. Normalized mCE is a ratio and
    /// mT5D a rank distance, so neither is included.
    pub fn rates(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut push = |name: &str, v: f64| out.push((name.to_owned(), v));
        if let Some(e) = self.clean_error {
            push("clean_error", e);
        }
        if let Some(m) = self.mce.as_ref().filter(|m| !m.normalized) {
            push("mce", m.value);
            for (c, v) in &m.per_corruption {
                push(&format!("mce.{c}"), *v);
            }
        }
        if let Some(m) = &self.mfr {
            push("mfr", m.value);
        }
        for (s, v) in &self.rms_calibration.per_split {
            push(&format!("rms_calibration.{s}"), *v);
        }
        for (s, d) in &self.detection_per_split {
            push(&format!("auroc.{s}"), d.auroc);
            push(&format!("aupr.{s}"), d.aupr);
        }
        out
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:.2}%", 100.0 * v))
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.counts;
        writeln!(
            f,
            "records: {} ({} clean, {} corrupted, {} in sequences, {} anomalies; {} classes)",
            c.records, c.clean, c.corrupted, c.sequence, c.anomaly, c.classes
        )?;
        writeln!(f, "clean error:  {}", pct(self.clean_error))?;
        match &self.mce {
            Some(m) if m.normalized => writeln!(f, "mCE:          {:.2} (normalized)", 100.0 * m.value)?,
            Some(m) => writeln!(f, "mCE:          {}", pct(Some(m.value)))?,
            None => writeln!(f, "mCE:          n/a")?,
        }
        writeln!(f, "mFR:          {}", pct(self.mfr.as_ref().map(|m| m.value)))?;
        match &self.mt5d {
            Some(m) => writeln!(f, "mT5D:         {:.3}", m.value)?,
            None => writeln!(f, "mT5D:         n/a")?,
        }
        for (s, v) in &self.rms_calibration.per_split {
            writeln!(f, "RMS calibration error [{s}]: {}", pct(Some(*v)))?;
        }
        writeln!(f, "AUROC:        {}", pct(self.auroc))?;
        write!(f, "AUPR:         {}", pct(self.aupr))
    }
}
