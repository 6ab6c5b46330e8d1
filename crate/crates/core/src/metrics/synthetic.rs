//! Synthetic anomaly images for detection evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{save_png, ImageTensor, CHANNELS};
use crate::stochastic::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyKind {
    /// Per-element `N(0.5, 0.25^2)`, clipped to `[0, 1]`.
    Gaussian,
    /// Per-element `{0, 1}` with equal probability.
    Rademacher,
    /// Box-blurred uniform noise binarized at its per-channel median.
    Blobs,
}

impl AnomalyKind {
    pub const ALL: [AnomalyKind; 3] = [AnomalyKind::Gaussian, AnomalyKind::Rademacher, AnomalyKind::Blobs];

    pub fn name(self) -> &'static str {
        match self {
            AnomalyKind::Gaussian => "gaussian",
            AnomalyKind::Rademacher => "rademacher",
            AnomalyKind::Blobs => "blobs",
        }
    }
}

impl std::str::FromStr for AnomalyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnomalyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown anomaly kind {s:?} (gaussian|rademacher|blobs)")))
    }
}

/// Separable box blur with edge clamping on a `size x size` plane.
fn box_blur(plane: &[f64], size: usize, radius: usize) -> Vec<f64> {
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        let width = (2 * radius + 1) as f64;
        for y in 0..size {
            for x in 0..size {
                let mut acc = 0.0;
                for d in -(radius as isize)..=radius as isize {
                    let clamp = |v: usize| (v as isize + d).clamp(0, size as isize - 1) as usize;
                    let idx = if horizontal { y * size + clamp(x) } else { clamp(y) * size + x };
                    acc += src[idx];
                }
                out[y * size + x] = acc / width;
            }
        }
        out
    };
    let h = pass(plane, true);
    pass(&h, false)
}

fn blobs(stream: &mut RngStream, size: usize) -> Vec<f32> {
    let radius = (size / 8).max(1);
    let mut data = vec![0.0f32; size * size * CHANNELS];
    for c in 0..CHANNELS {
        let noise: Vec<f64> = (0..size * size).map(|_| stream.next_uniform()).collect();
        let smooth = box_blur(&box_blur(&noise, size, radius), size, radius);
        let mut sorted = smooth.clone();
        sorted.sort_by(f64::total_cmp);
        let median = sorted[(sorted.len() - 1) / 2];
        for (i, v) in smooth.iter().enumerate() {
            data[i * CHANNELS + c] = if *v > median { 1.0 } else { 0.0 };
        }
    }
    data
}

/// One anomaly image of side `size`.
pub fn synthetic_anomaly(kind: AnomalyKind, stream: &mut RngStream, size: usize) -> Result<ImageTensor> {
    if size == 0 {
        return Err(Error::invalid("anomaly size must be >= 1"));
    }
    let n = size * size * CHANNELS;
    let data: Vec<f32> = match kind {
        AnomalyKind::Gaussian => (0..n)
            .map(|_| (0.5 + 0.25 * stream.sample_normal()).clamp(0.0, 1.0) as f32)
            .collect(),
        AnomalyKind::Rademacher => (0..n).map(|_| if stream.coin() { 1.0 } else { 0.0 }).collect(),
        AnomalyKind::Blobs => blobs(stream, size),
    };
    ImageTensor::new(size, size, data)
}

/// Writes `{kind}_{i:06}.png` for `i < count`, each drawn from `stream.split(i)`.
pub fn gen_synthetic_anomalies(
    kind: AnomalyKind,
    stream: &RngStream,
    count: usize,
    size: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    if count == 0 {
        return Err(Error::invalid("count must be >= 1"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    (0..count)
        .map(|i| {
            let img = synthetic_anomaly(kind, &mut stream.split(i), size)?;
            let path = out_dir.join(format!("{}_{i:06}.png", kind.name()));
            save_png(&img, &path)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rademacher_is_binary_and_balanced() {
        let img = synthetic_anomaly(AnomalyKind::Rademacher, &mut RngStream::new(1), 64).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
        assert!((img.mean() - 0.5).abs() < 0.02);
    }

    #[test]
    fn gaussian_moments() {
        let img = synthetic_anomaly(AnomalyKind::Gaussian, &mut RngStream::new(2), 578).unwrap();
        assert!(img.data().len() >= 1_000_000);
        assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert!((img.mean() - 0.5).abs() < 0.01, "{}", img.mean());
    }

    #[test]
    fn blobs_are_binary_with_median_split() {
        for seed in 0..5 {
            let img = synthetic_anomaly(AnomalyKind::Blobs, &mut RngStream::new(seed), 64).unwrap();
            assert!(img.data().iter().all(|&v| v == 0.0 || v == 1.0));
            assert!((img.mean() - 0.5).abs() <= 0.02, "{}", img.mean());
        }
    }

    #[test]
    fn blobs_are_spatially_smooth() {
        // neighbouring pixels agree far more often than independent noise would
        let img = synthetic_anomaly(AnomalyKind::Blobs, &mut RngStream::new(3), 64).unwrap();
        let (mut same, mut total) = (0, 0);
        for y in 0..64 {
            for x in 1..64 {
                same += usize::from(img.get(y, x, 0) == img.get(y, x - 1, 0));
                total += 1;
            }
        }
        assert!(same as f64 / total as f64 > 0.8);
    }

    #[test]
    fn files_are_named_and_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let s = RngStream::new(9);
        let paths = gen_synthetic_anomalies(AnomalyKind::Blobs, &s, 3, 16, dir.path()).unwrap();
        assert_eq!(paths[2].file_name().unwrap(), "blobs_000002.png");
        let again = synthetic_anomaly(AnomalyKind::Blobs, &mut s.split(2usize), 16).unwrap();
        assert_eq!(crate::image::load_png(&paths[2]).unwrap(), again);
        assert!(gen_synthetic_anomalies(AnomalyKind::Blobs, &s, 0, 16, dir.path()).is_err());
        assert!("nope".parse::<AnomalyKind>().is_err());
    }
}
