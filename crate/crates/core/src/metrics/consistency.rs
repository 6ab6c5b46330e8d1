//! Prediction consistency over perturbation sequences: flip rate and top-5
//! displacement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::records::PredictionRecord;
use crate::error::{Error, Result};

/// Ranks are capped here, so a class outside a top-5 list counts as rank 6.
const RANK_CAP: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub per_perturbation: BTreeMap<String, f64>,
    pub value: f64,
}

/// Sorts one sequence by frame and checks frames run `1..=T`, `T >= 2`,
/// with a single temporal flag.
pub fn order_sequence<'a>(frames: &[&'a PredictionRecord]) -> Result<(Vec<&'a PredictionRecord>, bool)> {
    let mut sorted = frames.to_vec();
    sorted.sort_by_key(|r| r.tags.frame_index);
    if sorted.len() < 2 {
        return Err(Error::Schema(format!(
            "a sequence needs at least 2 frames, got {}",
            sorted.len()
        )));
    }
    for (i, r) in sorted.iter().enumerate() {
        if r.tags.frame_index != Some(i as u32 + 1) {
            return Err(Error::Schema(format!(
                "sequence {:?}: expected frame {}, found {:?} (record {:?})",
                r.tags.sequence_id.as_deref().unwrap_or(""),
                i + 1,
                r.tags.frame_index,
                r.id
            )));
        }
    }
    let temporal = sorted[0].tags.is_temporal();
    if sorted.iter().any(|r| r.tags.is_temporal() != temporal) {
        return Err(Error::Schema("sequence mixes temporal and non-temporal frames".into()));
    }
    Ok((sorted, temporal))
}

/// Pairs compared within a sequence: neighbours for temporal sequences,
/// `(first, j)` otherwise.
fn comparison_pairs<'a>(
    frames: &[&'a PredictionRecord],
    temporal: bool,
) -> Vec<(&'a PredictionRecord, &'a PredictionRecord)> {
    (1..frames.len())
        .map(|j| {
            let reference = if temporal { frames[j - 1] } else { frames[0] };
            (reference, frames[j])
        })
        .collect()
}

pub fn flip_rate(sequence: &[&PredictionRecord]) -> Result<f64> {
    let (frames, temporal) = order_sequence(sequence)?;
    let pairs = comparison_pairs(&frames, temporal);
    let flips = pairs
        .iter()
        .filter(|(a, b)| a.predicted() != b.predicted())
        .count();
    Ok(flips as f64 / pairs.len() as f64)
}

/// 1-based ranks by descending probability, ties to the smaller class index.
fn ranks(probs: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&i, &j| probs[j].total_cmp(&probs[i]).then(i.cmp(&j)));
    let mut rank = vec![0; probs.len()];
    for (pos, class) in order.into_iter().enumerate() {
        rank[class] = pos + 1;
    }
    rank
}

/// Top-5 displacement: sum over the union of both top-5 sets of the absolute
/// difference of ranks capped at 6.
pub fn t5d(prev: &[f64], cur: &[f64]) -> Result<f64> {
    if prev.len() != cur.len() {
        return Err(Error::invalid("t5d inputs have different class counts"));
    }
    if prev.len() < 5 {
        return Err(Error::invalid(format!("t5d needs >= 5 classes, got {}", prev.len())));
    }
    let (rp, rc) = (ranks(prev), ranks(cur));
    let total: usize = (0..prev.len())
        .filter(|&c| rp[c] <= 5 || rc[c] <= 5)
        .map(|c| rp[c].min(RANK_CAP).abs_diff(rc[c].min(RANK_CAP)))
        .sum();
    Ok(total as f64)
}

fn sequence_t5d(sequence: &[&PredictionRecord]) -> Result<f64> {
    let (frames, temporal) = order_sequence(sequence)?;
    let pairs = comparison_pairs(&frames, temporal);
    let mut sum = 0.0;
    for (a, b) in &pairs {
        sum += t5d(&a.probs, &b.probs)?;
    }
    Ok(sum / pairs.len() as f64)
}

/// Groups records by perturbation (the corruption tag) and sequence id.
fn group_sequences<'a>(
    records: &[&'a PredictionRecord],
) -> Result<BTreeMap<String, BTreeMap<String, Vec<&'a PredictionRecord>>>> {
    let mut groups: BTreeMap<String, BTreeMap<String, Vec<&PredictionRecord>>> = BTreeMap::new();
    for r in records {
        let seq = r.tags.sequence_id.as_ref().ok_or_else(|| {
            Error::Schema(format!("record {:?} has no sequence_id", r.id))
        })?;
        let perturbation = r.tags.corruption.clone().unwrap_or_default();
        groups
            .entry(perturbation)
            .or_default()
            .entry(seq.clone())
            .or_default()
            .push(r);
    }
    if groups.is_empty() {
        return Err(Error::invalid("no sequences"));
    }
    Ok(groups)
}

/// Per-sequence statistic, averaged within each perturbation and then
/// macro-averaged over perturbations.
fn macro_average(
    records: &[&PredictionRecord],
    per_sequence: impl Fn(&[&PredictionRecord]) -> Result<f64>,
) -> Result<ConsistencyReport> {
    let mut per_perturbation = BTreeMap::new();
    for (name, sequences) in group_sequences(records)? {
        let mut sum = 0.0;
        for frames in sequences.values() {
            sum += per_sequence(frames)?;
        }
        per_perturbation.insert(name, sum / sequences.len() as f64);
    }
    let value = per_perturbation.values().sum::<f64>() / per_perturbation.len() as f64;
    Ok(ConsistencyReport {
        per_perturbation,
        value,
    })
}

/// Mean flip rate.
pub fn mfr(records: &[&PredictionRecord]) -> Result<ConsistencyReport> {
    macro_average(records, flip_rate)
}

/// Mean top-5 displacement.
pub fn mt5d(records: &[&PredictionRecord]) -> Result<ConsistencyReport> {
    macro_average(records, sequence_t5d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::records::Tags;

    fn frame(seq: &str, pert: &str, index: u32, pred: usize, temporal: bool) -> PredictionRecord {
        let mut probs = vec![0.05; 6];
        probs[pred] = 0.75;
        PredictionRecord {
            id: format!("{pert}/{seq}/{index}"),
            label: Some(0),
            probs,
            tags: Tags {
                split: "p".into(),
                corruption: Some(pert.into()),
                sequence_id: Some(seq.into()),
                frame_index: Some(index),
                temporal: Some(temporal),
                ..Tags::default()
            },
        }
    }

    fn sequence(seq: &str, pert: &str, preds: &[usize], temporal: bool) -> Vec<PredictionRecord> {
        preds
            .iter()
            .enumerate()
            .map(|(i, &p)| frame(seq, pert, i as u32 + 1, p, temporal))
            .collect()
    }

    fn refs(v: &[PredictionRecord]) -> Vec<&PredictionRecord> {
        v.iter().collect()
    }

    #[test]
    fn flip_rate_examples() {
        let constant = sequence("s", "p", &[2, 2, 2, 2], true);
        assert_eq!(flip_rate(&refs(&constant)).unwrap(), 0.0);
        // A A B B A
        let t = sequence("s", "p", &[0, 0, 1, 1, 0], true);
        assert_eq!(flip_rate(&refs(&t)).unwrap(), 0.5);
        let nt = sequence("s", "p", &[0, 0, 1, 1, 0], false);
        assert_eq!(flip_rate(&refs(&nt)).unwrap(), 0.5);
        // the two definitions differ in general: A B B B
        let t = sequence("s", "p", &[0, 1, 1, 1], true);
        let nt = sequence("s", "p", &[0, 1, 1, 1], false);
        assert!((flip_rate(&refs(&t)).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(flip_rate(&refs(&nt)).unwrap(), 1.0);
    }

    #[test]
    fn flip_rate_sorts_frames_and_rejects_gaps() {
        let mut t = sequence("s", "p", &[0, 0, 1, 1, 0], true);
        t.reverse();
        assert_eq!(flip_rate(&refs(&t)).unwrap(), 0.5);
        t.remove(2);
        assert!(matches!(flip_rate(&refs(&t)), Err(Error::Schema(_))));
        let one = sequence("s", "p", &[0], true);
        assert!(flip_rate(&refs(&one)).is_err());
        let mut mixed = sequence("s", "p", &[0, 1, 0], true);
        mixed[1].tags.temporal = Some(false);
        assert!(flip_rate(&refs(&mixed)).is_err());
    }

    #[test]
    fn mfr_macro_average() {
        // FR 0.2 (1 flip in 5 pairs) and 0.4 (2 flips)
        let mut recs = sequence("a", "noise", &[0, 0, 0, 0, 0, 1], true);
        recs.extend(sequence("b", "noise", &[0, 1, 1, 1, 1, 0], true));
        let rep = mfr(&refs(&recs)).unwrap();
        assert!((rep.value - 0.3).abs() < 1e-12);

        // perturbation averages first: shift = mean(0.4, 0.2) = 0.3
        let mut recs = sequence("a", "blur", &[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1], true);
        recs.extend(sequence("b", "shift", &[0, 0, 1, 1, 0, 0], true));
        recs.extend(sequence("c", "shift", &[0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 0], true));
        let rep = mfr(&refs(&recs)).unwrap();
        assert!((rep.per_perturbation["blur"] - 0.1).abs() < 1e-12);
        assert!((rep.per_perturbation["shift"] - 0.3).abs() < 1e-12);
        assert!((rep.value - 0.2).abs() < 1e-12);

        let flat = sequence("a", "n", &[3, 3, 3], true);
        assert_eq!(mfr(&refs(&flat)).unwrap().value, 0.0);
    }

    #[test]
    fn mfr_with_means_point_one_and_point_five() {
        let mut recs = sequence("a", "x", &[0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1], true);
        recs.extend(sequence("b", "y", &[0, 1, 1, 0, 0], true)); // 2/4
        let rep = mfr(&refs(&recs)).unwrap();
        assert!((rep.value - 0.3).abs() < 1e-12);
    }

    #[test]
    fn t5d_examples() {
        let p = [0.3, 0.25, 0.2, 0.1, 0.08, 0.07];
        assert_eq!(t5d(&p, &p).unwrap(), 0.0);
        let swapped = [0.25, 0.3, 0.2, 0.1, 0.08, 0.07];
        assert_eq!(t5d(&p, &swapped).unwrap(), 2.0);
        // ten classes, disjoint top-5 sets
        let a: Vec<f64> = (0..10).map(|i| if i < 5 { 0.19 - 0.01 * i as f64 } else { 0.01 }).collect();
        let b: Vec<f64> = (0..10).map(|i| if i >= 5 { 0.19 - 0.01 * (i - 5) as f64 } else { 0.01 }).collect();
        assert_eq!(t5d(&a, &b).unwrap(), 30.0);
        assert_eq!(t5d(&b, &a).unwrap(), 30.0);
        assert!(t5d(&[0.25; 4], &[0.25; 4]).is_err());
    }

    #[test]
    fn t5d_ties_rank_smaller_index_first() {
        assert_eq!(ranks(&[0.2, 0.2, 0.6]), vec![2, 3, 1]);
    }

    #[test]
    fn mt5d_of_constant_sequences_is_zero() {
        let recs = sequence("a", "n", &[1, 1, 1, 1], false);
        assert_eq!(mt5d(&refs(&recs)).unwrap().value, 0.0);
        // top-1 swap between classes 0 and 1 every frame: ranks 1<->2 -> t5d 2
        let recs = sequence("a", "n", &[0, 1, 0, 1], true);
        assert_eq!(mt5d(&refs(&recs)).unwrap().value, 2.0);
    }
}
