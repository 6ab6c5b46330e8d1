use super::records::PredictionRecord;
use crate::error::{Error, Result};

/// Default bin count for `n` records: `floor(sqrt(n))`, at least 1.
pub fn default_bins(n: usize) -> usize {
    ((n as f64).sqrt().floor() as usize).clamp(1, n.max(1))
}

/// RMS calibration error with adaptive (equal-mass) binning.
///
/// Records are ordered by confidence (max probability) and cut into `bins`
/// contiguous groups whose sizes differ by at most one. The result is
/// `sqrt(sum_b (n_b / n) (acc_b - conf_b)^2)`.
pub fn rms_calibration_error(records: &[&PredictionRecord], bins: Option<usize>) -> Result<f64> {
    let n = records.len();
    if n == 0 {
        return Err(Error::invalid("calibration error of an empty set"));
    }
    let bins = match bins {
        Some(0) => return Err(Error::invalid("bin count must be >= 1")),
        Some(b) => b.min(n),
        None => default_bins(n),
    };
    let mut scored = Vec::with_capacity(n);
    for r in records {
        let correct = r
            .is_correct()
            .ok_or_else(|| Error::Schema(format!("record {:?} has no label", r.id)))?;
        scored.push((r.confidence(), correct));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut total = 0.0;
    for b in 0..bins {
        let (lo, hi) = (b * n / bins, (b + 1) * n / bins);
        let chunk = &scored[lo..hi];
        let m = chunk.len() as f64;
        let conf = chunk.iter().map(|(c, _)| c).sum::<f64>() / m;
        let acc = chunk.iter().filter(|(_, ok)| *ok).count() as f64 / m;
        total += m / n as f64 * (acc - conf).powi(2);
    }
    Ok(total.sqrt())
}
