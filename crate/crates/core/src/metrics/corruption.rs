use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::records::PredictionRecord;
use crate::error::{Error, Result};

/// Reference errors per corruption and severity, as read from a
/// `{"corruption": {"severity": error}}` JSON file.
pub type Normalizers = BTreeMap<String, BTreeMap<u8, f64>>;

/// Fraction of labeled records whose argmax differs from the label.
pub fn classification_error<'a, I>(records: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a PredictionRecord>,
{
    let (mut n, mut wrong) = (0usize, 0usize);
    for r in records {
        let correct = r
            .is_correct()
            .ok_or_else(|| Error::Schema(format!("record {:?} has no label", r.id)))?;
        n += 1;
        wrong += usize::from(!correct);
    }
    if n == 0 {
        return Err(Error::invalid("classification error of an empty set"));
    }
    Ok(wrong as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorruptionReport {
    pub normalized: bool,
    pub per_corruption: BTreeMap<String, f64>,
    pub value: f64,
}

/// Mean corruption error.
///
/// Unnormalized: mean over corruptions of the mean error over severities.
/// Normalized: `CE_c = sum_s E[c,s] / sum_s ref[c,s]`, then the mean of `CE_c`.
pub fn mce(records: &[&PredictionRecord], normalizers: Option<&Normalizers>) -> Result<CorruptionReport> {
    let mut groups: BTreeMap<&str, BTreeMap<u8, Vec<&PredictionRecord>>> = BTreeMap::new();
    for r in records {
        let (Some(c), Some(s)) = (r.tags.corruption.as_deref(), r.tags.severity) else {
            return Err(Error::Schema(format!(
                "record {:?} lacks corruption/severity tags",
                r.id
            )));
        };
        groups.entry(c).or_default().entry(s).or_default().push(r);
    }
    if groups.is_empty() {
        return Err(Error::invalid("mCE of an empty set"));
    }

    let mut per_corruption = BTreeMap::new();
    for (corruption, severities) in &groups {
        let errors = severities
            .iter()
            .map(|(s, rs)| Ok((*s, classification_error(rs.iter().copied())?)))
            .collect::<Result<Vec<(u8, f64)>>>()?;
        let ce = match normalizers {
            None => errors.iter().map(|(_, e)| e).sum::<f64>() / errors.len() as f64,
            Some(norm) => {
                let mut reference = 0.0;
                for (s, _) in &errors {
                    let r = norm
                        .get(*corruption)
                        .and_then(|m| m.get(s))
                        .ok_or_else(|| {
                            Error::Schema(format!("no normalizer for {corruption} severity {s}"))
                        })?;
                    if !(*r > 0.0 && r.is_finite()) {
                        return Err(Error::invalid(format!(
                            "normalizer for {corruption} severity {s} must be positive, got {r}"
                        )));
                    }
                    reference += r;
                }
                errors.iter().map(|(_, e)| e).sum::<f64>() / reference
            }
        };
        per_corruption.insert((*corruption).to_owned(), ce);
    }
    let value = per_corruption.values().sum::<f64>() / per_corruption.len() as f64;
    Ok(CorruptionReport {
        normalized: normalizers.is_some(),
        per_corruption,
        value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::records::Tags;

    fn rec(id: usize, corruption: &str, severity: u8, correct: bool) -> PredictionRecord {
        PredictionRecord {
            id: format!("{corruption}-{severity}-{id}"),
            label: Some(if correct { 0 } else { 1 }),
            probs: vec![0.9, 0.1],
            tags: Tags {
                split: "c".into(),
                corruption: Some(corruption.into()),
                severity: Some(severity),
                ..Tags::default()
            },
        }
    }

    /// `wrong` of every 10 records per severity are misclassified.
    fn corrupted(corruption: &str, wrong: usize) -> Vec<PredictionRecord> {
        (1..=5)
            .flat_map(|s| (0..10).map(move |i| rec(i, corruption, s, i >= wrong)))
            .collect()
    }

    #[test]
    fn error_counts() {
        let all: Vec<_> = (0..10).map(|i| rec(i, "x", 1, true)).collect();
        assert_eq!(classification_error(&all).unwrap(), 0.0);
        let some: Vec<_> = (0..10).map(|i| rec(i, "x", 1, i >= 3)).collect();
        assert_eq!(classification_error(&some).unwrap(), 0.3);
        assert!(classification_error(&Vec::<PredictionRecord>::new()).is_err());
    }

    #[test]
    fn tie_counts_as_prediction_zero() {
        let r = PredictionRecord {
            id: "t".into(),
            label: Some(0),
            probs: vec![0.5, 0.5],
            tags: Tags::default(),
        };
        assert_eq!(classification_error([&r]).unwrap(), 0.0);
    }

    #[test]
    fn unnormalized_mce() {
        let perfect = corrupted("fog", 0);
        let refs: Vec<_> = perfect.iter().collect();
        assert_eq!(mce(&refs, None).unwrap().value, 0.0);

        let mut recs = corrupted("fog", 2);
        recs.extend(corrupted("snow", 4));
        let refs: Vec<_> = recs.iter().collect();
        let rep = mce(&refs, None).unwrap();
        assert!(!rep.normalized);
        assert!((rep.per_corruption["fog"] - 0.2).abs() < 1e-12);
        assert!((rep.per_corruption["snow"] - 0.4).abs() < 1e-12);
        assert!((rep.value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn self_normalized_mce_is_one() {
        let mut recs = corrupted("fog", 2);
        recs.extend(corrupted("snow", 4));
        let refs: Vec<_> = recs.iter().collect();
        let mut norm = Normalizers::new();
        for (c, e) in [("fog", 0.2), ("snow", 0.4)] {
            norm.insert(c.into(), (1..=5).map(|s| (s, e)).collect());
        }
        let rep = mce(&refs, Some(&norm)).unwrap();
        assert!(rep.normalized);
        assert!((rep.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalizer_problems() {
        let recs = corrupted("fog", 2);
        let refs: Vec<_> = recs.iter().collect();
        let mut norm = Normalizers::new();
        norm.insert("fog".into(), (1..=4).map(|s| (s, 0.2)).collect());
        assert!(matches!(mce(&refs, Some(&norm)), Err(Error::Schema(_))));
        norm.get_mut("fog").unwrap().insert(5, 0.0);
        assert!(matches!(mce(&refs, Some(&norm)), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn missing_tags_are_schema_errors() {
        let mut r = rec(0, "fog", 1, true);
        r.tags.severity = None;
        assert!(matches!(mce(&[&r], None), Err(Error::Schema(_))));
    }
}
