//! Anomaly-detection scores.
//!
//! Scores follow the MSP convention: in-distribution inputs should score
//! higher. For AUPR the positive class is the anomaly, ranked by negated
//! score.

use super::records::PredictionRecord;
use crate::error::{Error, Result};

/// Maximum softmax probability.
pub fn msp_score(record: &PredictionRecord) -> f64 {
    record.confidence()
}

fn check(in_scores: &[f64], anomaly_scores: &[f64]) -> Result<()> {
    if in_scores.is_empty() || anomaly_scores.is_empty() {
        return Err(Error::invalid("AUROC/AUPR need both in-distribution and anomaly scores"));
    }
    if in_scores.iter().chain(anomaly_scores).any(|s| s.is_nan()) {
        return Err(Error::Numeric("NaN score".into()));
    }
    Ok(())
}

/// Area under the ROC curve for separating anomalies from in-distribution
/// inputs: `P(in > anomaly) + P(in == anomaly) / 2`, computed from midranks.
pub fn auroc(in_scores: &[f64], anomaly_scores: &[f64]) -> Result<f64> {
    check(in_scores, anomaly_scores)?;
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, true))
        .chain(anomaly_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sum of 1-based midranks of in-distribution scores.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let ins = all[i..=j].iter().filter(|(_, is_in)| *is_in).count();
        rank_sum += midrank * ins as f64;
        i = j + 1;
    }
    let (n_in, n_out) = (in_scores.len() as f64, anomaly_scores.len() as f64);
    let u = rank_sum - n_in * (n_in + 1.0) / 2.0;
    Ok(u / (n_in * n_out))
}

/// Average precision with anomalies as positives, ranked most-anomalous
/// (lowest score) first. Tied scores enter as one threshold step.
pub fn aupr(in_scores: &[f64], anomaly_scores: &[f64]) -> Result<f64> {
    check(in_scores, anomaly_scores)?;
    let mut all: Vec<(f64, bool)> = in_scores
        .iter()
        .map(|&s| (s, false))
        .chain(anomaly_scores.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let positives = anomaly_scores.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let new_tp = all[i..=j].iter().filter(|(_, pos)| *pos).count();
        tp += new_tp;
        fp += j + 1 - i - new_tp;
        if new_tp > 0 {
            ap += (new_tp as f64 / positives) * (tp as f64 / (tp + fp) as f64);
        }
        i = j + 1;
    }
    Ok(ap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::records::Tags;
    use crate::stochastic::RngStream;

    fn brute_auroc(ins: &[f64], outs: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &a in ins {
            for &b in outs {
                acc += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        acc / (ins.len() * outs.len()) as f64
    }

    #[test]
    fn msp_examples() {
        let mk = |probs: Vec<f64>| PredictionRecord {
            id: String::new(),
            label: None,
            probs,
            tags: Tags::default(),
        };
        assert!((msp_score(&mk(vec![0.1; 10])) - 0.1).abs() < 1e-15);
        assert_eq!(msp_score(&mk(vec![0.0, 1.0, 0.0])), 1.0);
        assert_eq!(msp_score(&mk(vec![0.7, 0.2, 0.1])), 0.7);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8], &[0.3, 0.2]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 7], &[0.5; 3]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1], &[0.9]).unwrap(), 0.0);
        assert!(auroc(&[], &[0.1]).is_err());
        assert!(auroc(&[0.1], &[]).is_err());
        assert!(auroc(&[f64::NAN], &[0.1]).is_err());
    }

    #[test]
    fn auroc_matches_pairwise_oracle() {
        let mut s = RngStream::new(23);
        let ins: Vec<f64> = (0..200).map(|_| s.next_uniform() + 0.2).collect();
        let outs: Vec<f64> = (0..200).map(|_| s.next_uniform()).collect();
        assert!((auroc(&ins, &outs).unwrap() - brute_auroc(&ins, &outs)).abs() < 1e-12);
    }

    #[test]
    fn aupr_examples() {
        assert_eq!(aupr(&[0.9, 0.8], &[0.3, 0.2]).unwrap(), 1.0);
        // all tied: precision is the anomaly prevalence
        assert!((aupr(&[0.5; 3], &[0.5; 1]).unwrap() - 0.25).abs() < 1e-12);
        // reversed separation: anomalies ranked after every inlier
        let ap = aupr(&[0.1, 0.2], &[0.8, 0.9]).unwrap();
        assert!((ap - (0.5 * (1.0 / 3.0) + 0.5 * 0.5)).abs() < 1e-12);
    }
}
