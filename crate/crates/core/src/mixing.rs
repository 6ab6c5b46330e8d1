//! Conic additive/multiplicative mixing and the PixMix pipeline.
//!
//! ```text
//! x = augment(x_orig) or x_orig                      (fair coin)
//! repeat r ~ U{0..k} times:
//!     mix_image = augment(x_orig) or mixing picture  (fair coin, unless the mode forces one)
//!     mix_op    = additive or multiplicative          (fair coin)
//!     x = mix_op(x, mix_image, a ~ Beta(beta, 1), b ~ Beta(1, beta))
//! ```
//!
//! Labels are never touched: a mixed image keeps the class of `x_orig`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::augment::{random_augment, AugConfig};
use crate::error::{Error, Result};
use crate::image::{load_png, resize_bilinear, save_png, ImageTensor};
use crate::mixing_set::{sample_picture, MixingSource};
use crate::stochastic::RngStream;

/// Floor applied before exponentiation in multiplicative mixing.
pub const MULTIPLICATIVE_EPS: f64 = 1e-6;

/// Nonnegative mixing weights; `a + b` is unconstrained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixCoefficients {
    pub a: f64,
    pub b: f64,
}

impl MixCoefficients {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::invalid(format!("conic coefficients must be finite and >= 0, got ({a}, {b})")));
        }
        Ok(Self { a, b })
    }
}

/// `a ~ Beta(beta, 1)` and `b ~ Beta(1, beta)`, drawn independently.
pub fn sample_conic_coeffs(stream: &mut RngStream, beta: f64) -> Result<MixCoefficients> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let a = stream.sample_beta(beta, 1.0)?;
    let b = stream.sample_beta(1.0, beta)?;
    Ok(MixCoefficients { a, b })
}

fn check_dims(x1: &ImageTensor, x2: &ImageTensor) -> Result<()> {
    if x1.dims() != x2.dims() {
        return Err(Error::invalid(format!(
            "cannot mix {:?} with {:?} images",
            x1.dims(),
            x2.dims()
        )));
    }
    Ok(())
}

fn combine(x1: &ImageTensor, x2: &ImageTensor, f: impl Fn(f64, f64) -> f64) -> ImageTensor {
    let data = x1
        .data()
        .iter()
        .zip(x2.data())
        .map(|(&p, &q)| f(f64::from(p), f64::from(q)).clamp(0.0, 1.0) as f32)
        .collect();
    ImageTensor::from_raw(x1.height(), x1.width(), data)
}

/// Weighted sum in the signed domain: `clip01((a(2x1-1) + b(2x2-1) + 1) / 2)`.
pub fn mix_additive(x1: &ImageTensor, x2: &ImageTensor, k: MixCoefficients) -> Result<ImageTensor> {
    check_dims(x1, x2)?;
    Ok(combine(x1, x2, |p, q| {
        (k.a * (2.0 * p - 1.0) + k.b * (2.0 * q - 1.0) + 1.0) / 2.0
    }))
}

/// Weighted geometric combination on `(0, 2]`:
/// `clip01(max(2x1, eps)^a * max(2x2, eps)^b / 2)`.
pub fn mix_multiplicative(
    x1: &ImageTensor,
    x2: &ImageTensor,
    k: MixCoefficients,
) -> Result<ImageTensor> {
    check_dims(x1, x2)?;
    Ok(combine(x1, x2, |p, q| {
        let v1 = (2.0 * p).max(MULTIPLICATIVE_EPS);
        let v2 = (2.0 * q).max(MULTIPLICATIVE_EPS);
        v1.powf(k.a) * v2.powf(k.b) / 2.0
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixOp {
    Additive,
    Multiplicative,
}

impl MixOp {
    pub fn apply(self, x1: &ImageTensor, x2: &ImageTensor, k: MixCoefficients) -> Result<ImageTensor> {
        match self {
            MixOp::Additive => mix_additive(x1, x2, k),
            MixOp::Multiplicative => mix_multiplicative(x1, x2, k),
        }
    }
}

/// Where mixing partners come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    /// Augmented copy of the original or a mixing picture, each with
    /// probability 1/2.
    #[default]
    Full,
    /// Only augmented copies of the original; the mixing set is never read.
    InputOnly,
    /// Only mixing pictures.
    MixsetOnly,
}

impl std::str::FromStr for MixMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(MixMode::Full),
            "input_only" | "input-only" => Ok(MixMode::InputOnly),
            "mixset_only" | "mixset-only" => Ok(MixMode::MixsetOnly),
            _ => Err(Error::invalid(format!("unknown mix mode {s:?}"))),
        }
    }
}

/// How each round's coefficients are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientPolicy {
    #[default]
    Beta,
    /// Every round uses these coefficients; no draws are made for them.
    Fixed(MixCoefficients),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Cifar,
    Imagenet,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cifar" => Ok(Preset::Cifar),
            "imagenet" => Ok(Preset::Imagenet),
            _ => Err(Error::invalid(format!("unknown preset {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixMixConfig {
    /// Maximum number of mixing rounds.
    pub k: usize,
    pub beta: f64,
    pub mode: MixMode,
    pub aug: AugConfig,
    pub target_size: usize,
    #[serde(default)]
    pub coefficients: CoefficientPolicy,
}

impl Default for PixMixConfig {
    fn default() -> Self {
        Self::preset(Preset::Cifar)
    }
}

impl PixMixConfig {
    /// CIFAR: `k = 4, beta = 3` at 32 px. ImageNet: `k = 4, beta = 4` at 224 px.
    pub fn preset(preset: Preset) -> Self {
        let (beta, target_size) = match preset {
            Preset::Cifar => (3.0, 32),
            Preset::Imagenet => (4.0, 224),
        };
        Self {
            k: 4,
            beta,
            mode: MixMode::Full,
            aug: AugConfig::default(),
            target_size,
            coefficients: CoefficientPolicy::Beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if self.target_size == 0 {
            return Err(Error::invalid("target size must be >= 1"));
        }
        AugConfig::with_severity(self.aug.severity())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MixPartner {
    Augmented,
    Picture,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundTrace {
    pub partner: MixPartner,
    pub op: MixOp,
    pub coeffs: MixCoefficients,
}

/// The random decisions one pipeline run made.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PixMixTrace {
    pub initial_augmented: bool,
    pub rounds: Vec<RoundTrace>,
}

/// Runs the pipeline and records its decisions.
pub fn pixmix_traced<S: MixingSource + ?Sized>(
    x_orig: &ImageTensor,
    source: &S,
    config: &PixMixConfig,
    stream: &mut RngStream,
) -> Result<(ImageTensor, PixMixTrace)> {
    config.validate()?;
    if x_orig.dims() != (config.target_size, config.target_size) {
        return Err(Error::invalid(format!(
            "input is {:?}, pipeline expects {1}x{1}",
            x_orig.dims(),
            config.target_size
        )));
    }
    if config.mode != MixMode::InputOnly && source.picture_count() == 0 {
        return Err(Error::invalid("mixing set is empty"));
    }

    let mut trace = PixMixTrace {
        initial_augmented: stream.coin(),
        rounds: Vec::new(),
    };
    let mut mixed = if trace.initial_augmented {
        random_augment(x_orig, stream, &config.aug)
    } else {
        x_orig.clone()
    };

    let rounds = stream.choose_uniform(config.k + 1)?;
    for _ in 0..rounds {
        let partner = match config.mode {
            MixMode::Full if stream.coin() => MixPartner::Augmented,
            MixMode::Full => MixPartner::Picture,
            MixMode::InputOnly => MixPartner::Augmented,
            MixMode::MixsetOnly => MixPartner::Picture,
        };
        let mix_image = match partner {
            MixPartner::Augmented => random_augment(x_orig, stream, &config.aug),
            MixPartner::Picture => sample_picture(source, stream, config.target_size)?,
        };
        let op = if stream.coin() {
            MixOp::Additive
        } else {
            MixOp::Multiplicative
        };
        let coeffs = match config.coefficients {
            CoefficientPolicy::Beta => sample_conic_coeffs(stream, config.beta)?,
            CoefficientPolicy::Fixed(k) => k,
        };
        mixed = op.apply(&mixed, &mix_image, coeffs)?;
        trace.rounds.push(RoundTrace {
            partner,
            op,
            coeffs,
        });
    }
    Ok((mixed, trace))
}

pub fn pixmix<S: MixingSource + ?Sized>(
    x_orig: &ImageTensor,
    source: &S,
    config: &PixMixConfig,
    stream: &mut RngStream,
) -> Result<ImageTensor> {
    pixmix_traced(x_orig, source, config, stream).map(|(img, _)| img)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DatasetSummary {
    pub count: usize,
    pub failures: Vec<(PathBuf, String)>,
    pub duration_secs: f64,
}

/// Relative paths of every `.png` under `dir`, sorted, with `/` separators.
pub fn list_pngs(dir: &Path) -> Result<Vec<String>> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "not a directory"),
        ));
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::io(dir, e.into()))?;
        let p = entry.path();
        let png = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if entry.file_type().is_file() && png {
            let rel = p.strip_prefix(dir).expect("walkdir yields children");
            let parts: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
            out.push(parts.join("/"));
        }
    }
    out.sort();
    Ok(out)
}

fn augment_file<S: MixingSource + ?Sized>(
    rel: &str,
    input_dir: &Path,
    out_dir: &Path,
    source: &S,
    config: &PixMixConfig,
    stream: &RngStream,
) -> Result<()> {
    let mut img = load_png(input_dir.join(rel))?;
    if img.dims() != (config.target_size, config.target_size) {
        img = resize_bilinear(&img, config.target_size, config.target_size)?;
    }
    let mixed = pixmix(&img, source, config, &mut stream.split(rel))?;
    let dest = out_dir.join(rel);
    if let Some(parent) = dest.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    save_png(&mixed, dest)
}

/// Augments every PNG under `input_dir` into the mirrored path under
/// `out_dir`. Image `rel` uses substream `stream.split(rel)`, so the output
/// does not depend on `workers`.
pub fn augment_dataset<S: MixingSource + ?Sized>(
    input_dir: &Path,
    source: &S,
    config: &PixMixConfig,
    stream: &RngStream,
    out_dir: &Path,
    workers: usize,
) -> Result<DatasetSummary> {
    config.validate()?;
    if config.mode != MixMode::InputOnly && source.picture_count() == 0 {
        return Err(Error::invalid("mixing set is empty"));
    }
    let started = Instant::now();
    let files = list_pngs(input_dir)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    let results: Vec<(String, Result<()>)> = pool.install(|| {
        files
            .par_iter()
            .map(|rel| {
                let r = augment_file(rel, input_dir, out_dir, source, config, stream);
                (rel.clone(), r)
            })
            .collect()
    });
    let mut summary = DatasetSummary::default();
    for (rel, r) in results {
        match r {
            Ok(()) => summary.count += 1,
            Err(e) => {
                log::warn!("{rel}: {e}");
                summary.failures.push((PathBuf::from(rel), e.to_string()));
            }
        }
    }
    summary.duration_secs = started.elapsed().as_secs_f64();
    log::info!(
        "augmented {} of {} images in {:.2}s",
        summary.count,
        files.len(),
        summary.duration_secs
    );
    Ok(summary)
}
