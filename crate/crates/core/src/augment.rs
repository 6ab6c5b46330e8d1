//! The standard augmentation operations applied by `augment(x)`.
//!
//! The set deliberately leaves out brightness, contrast, colour and sharpness
//! style operations so that augmented training images never resemble the
//! corruption families used at evaluation time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{byte_to_unit, unit_to_byte, warp, ImageTensor, CHANNELS};
use crate::stochastic::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOpKind {
    Rotate,
    ShearX,
    ShearY,
    TranslateX,
    TranslateY,
    Posterize,
    Solarize,
    Autocontrast,
    Equalize,
}

impl AugOpKind {
    pub const ALL: [AugOpKind; 9] = [
        AugOpKind::Rotate,
        AugOpKind::ShearX,
        AugOpKind::ShearY,
        AugOpKind::TranslateX,
        AugOpKind::TranslateY,
        AugOpKind::Posterize,
        AugOpKind::Solarize,
        AugOpKind::Autocontrast,
        AugOpKind::Equalize,
    ];
}

/// Severity and the per-op magnitudes reached at severity 5.
///
/// Magnitudes scale linearly: at severity `s` an op draws from
/// `[-max * s / 5, max * s / 5]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugConfig {
    severity: u8,
    pub max_rotate_degrees: f64,
    pub max_shear: f64,
    /// Fraction of the image side.
    pub max_translate: f64,
    pub max_posterize_dropped_bits: u32,
    pub min_solarize_threshold: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        Self {
            severity: 3,
            max_rotate_degrees: 30.0,
            max_shear: 0.3,
            max_translate: 1.0 / 3.0,
            max_posterize_dropped_bits: 4,
            min_solarize_threshold: 0.0,
        }
    }
}

impl AugConfig {
    pub fn with_severity(severity: u8) -> Result<Self> {
        if !(1..=5).contains(&severity) {
            return Err(Error::invalid(format!("severity must be in 1..=5, got {severity}")));
        }
        Ok(Self {
            severity,
            ..Self::default()
        })
    }

    pub fn severity(&self) -> u8 {
        self.severity
    }

    fn scale(&self) -> f64 {
        f64::from(self.severity) / 5.0
    }
}

/// A concrete augmentation with its parameter resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugOp {
    Rotate(f64),
    ShearX(f64),
    ShearY(f64),
    TranslateX(f64),
    TranslateY(f64),
    Posterize(u32),
    Solarize(f64),
    Autocontrast,
    Equalize,
}

impl AugOp {
    pub fn kind(&self) -> AugOpKind {
        match self {
            AugOp::Rotate(_) => AugOpKind::Rotate,
            AugOp::ShearX(_) => AugOpKind::ShearX,
            AugOp::ShearY(_) => AugOpKind::ShearY,
            AugOp::TranslateX(_) => AugOpKind::TranslateX,
            AugOp::TranslateY(_) => AugOpKind::TranslateY,
            AugOp::Posterize(_) => AugOpKind::Posterize,
            AugOp::Solarize(_) => AugOpKind::Solarize,
            AugOp::Autocontrast => AugOpKind::Autocontrast,
            AugOp::Equalize => AugOpKind::Equalize,
        }
    }

    /// Draws an op kind uniformly, then its magnitude.
    pub fn sample(stream: &mut RngStream, config: &AugConfig) -> AugOp {
        let kind = AugOpKind::ALL[stream
            .choose_uniform(AugOpKind::ALL.len())
            .expect("non-empty op set")];
        let u = stream.uniform_range(-1.0, 1.0);
        let s = config.scale();
        match kind {
            AugOpKind::Rotate => AugOp::Rotate(u * config.max_rotate_degrees * s),
            AugOpKind::ShearX => AugOp::ShearX(u * config.max_shear * s),
            AugOpKind::ShearY => AugOp::ShearY(u * config.max_shear * s),
            // Stored as a fraction of the side; resolved to pixels in apply().
            AugOpKind::TranslateX => AugOp::TranslateX(u * config.max_translate * s),
            AugOpKind::TranslateY => AugOp::TranslateY(u * config.max_translate * s),
            AugOpKind::Posterize => {
                let dropped = (u.abs() * f64::from(config.max_posterize_dropped_bits) * s).round();
                AugOp::Posterize(8 - (dropped as u32).min(7))
            }
            AugOpKind::Solarize => {
                AugOp::Solarize(1.0 - u.abs() * (1.0 - config.min_solarize_threshold) * s)
            }
            AugOpKind::Autocontrast => AugOp::Autocontrast,
            AugOpKind::Equalize => AugOp::Equalize,
        }
    }

    /// Applies the op. Translations are interpreted as fractions of the
    /// corresponding side, as produced by [`AugOp::sample`].
    pub fn apply(&self, img: &ImageTensor) -> ImageTensor {
        match *self {
            AugOp::Rotate(deg) => rotate(img, deg),
            AugOp::ShearX(f) => shear_x(img, f),
            AugOp::ShearY(f) => shear_y(img, f),
            AugOp::TranslateX(frac) => translate_x(img, frac * img.width() as f64),
            AugOp::TranslateY(frac) => translate_y(img, frac * img.height() as f64),
            AugOp::Posterize(bits) => posterize(img, bits).expect("sampled bits are in 1..=8"),
            AugOp::Solarize(t) => solarize(img, t),
            AugOp::Autocontrast => autocontrast(img),
            AugOp::Equalize => equalize(img),
        }
    }
}

/// One randomly chosen augmentation at the configured severity.
pub fn random_augment(img: &ImageTensor, stream: &mut RngStream, config: &AugConfig) -> ImageTensor {
    AugOp::sample(stream, config).apply(img)
}

fn centre(img: &ImageTensor) -> (f64, f64) {
    ((img.height() as f64 - 1.0) / 2.0, (img.width() as f64 - 1.0) / 2.0)
}

/// Counter-clockwise rotation about the image centre; uncovered area is 0.
pub fn rotate(img: &ImageTensor, degrees: f64) -> ImageTensor {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = centre(img);
    warp(img, img.height(), img.width(), |y, x| {
        let (dy, dx) = (y - cy, x - cx);
        (sin * dx + cos * dy + cy, cos * dx - sin * dy + cx)
    })
}

pub fn shear_x(img: &ImageTensor, factor: f64) -> ImageTensor {
    let (cy, _) = centre(img);
    warp(img, img.height(), img.width(), |y, x| (y, x + factor * (y - cy)))
}

pub fn shear_y(img: &ImageTensor, factor: f64) -> ImageTensor {
    let (_, cx) = centre(img);
    warp(img, img.height(), img.width(), |y, x| (y + factor * (x - cx), x))
}

/// Shifts content right by `pixels`.
pub fn translate_x(img: &ImageTensor, pixels: f64) -> ImageTensor {
    warp(img, img.height(), img.width(), |y, x| (y, x - pixels))
}

/// Shifts content down by `pixels`.
pub fn translate_y(img: &ImageTensor, pixels: f64) -> ImageTensor {
    warp(img, img.height(), img.width(), |y, x| (y - pixels, x))
}

/// Keeps the top `keep_bits` bits of each 8-bit channel value.
pub fn posterize(img: &ImageTensor, keep_bits: u32) -> Result<ImageTensor> {
    if !(1..=8).contains(&keep_bits) {
        return Err(Error::invalid(format!("posterize bits must be in 1..=8, got {keep_bits}")));
    }
    let mask = !((1u16 << (8 - keep_bits)) - 1) as u8;
    Ok(img.map(|v| {
        // f32 grid values can sit a hair below the integer they encode.
        let byte = (f64::from(v) * 255.0 + 1e-3).floor().clamp(0.0, 255.0) as u8;
        byte_to_unit(byte & mask)
    }))
}

/// Inverts every value at or above `threshold`.
pub fn solarize(img: &ImageTensor, threshold: f64) -> ImageTensor {
    img.map(|v| if f64::from(v) >= threshold { 1.0 - v } else { v })
}

fn map_channels(img: &ImageTensor, mut per_channel: impl FnMut(&mut [f32])) -> ImageTensor {
    let n = img.height() * img.width();
    let mut planes: Vec<Vec<f32>> = (0..CHANNELS)
        .map(|c| img.data().iter().skip(c).step_by(CHANNELS).copied().collect())
        .collect();
    for plane in &mut planes {
        per_channel(plane);
    }
    let mut data = vec![0.0; n * CHANNELS];
    for (i, px) in data.chunks_exact_mut(CHANNELS).enumerate() {
        for (c, v) in px.iter_mut().enumerate() {
            *v = planes[c][i].clamp(0.0, 1.0);
        }
    }
    ImageTensor::from_raw(img.height(), img.width(), data)
}

/// Stretches each channel so its minimum maps to 0 and maximum to 1.
pub fn autocontrast(img: &ImageTensor) -> ImageTensor {
    map_channels(img, |plane| {
        let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if hi > lo {
            let (lo, span) = (f64::from(lo), f64::from(hi) - f64::from(lo));
            for v in plane.iter_mut() {
                *v = ((f64::from(*v) - lo) / span) as f32;
            }
        }
    })
}

/// Per-channel histogram equalization on the 8-bit grid.
///
/// Uses the cumulative-histogram lookup table familiar from PIL: the last
/// occupied bin is excluded from the step size, and a channel whose step is
/// zero (e.g. a single level) is left as is.
pub fn equalize(img: &ImageTensor) -> ImageTensor {
    map_channels(img, |plane| {
        let bytes: Vec<u8> = plane.iter().map(|&v| unit_to_byte(v)).collect();
        let mut hist = [0usize; 256];
        for &b in &bytes {
            hist[b as usize] += 1;
        }
        let last = hist.iter().rposition(|&h| h > 0).map_or(0, |i| hist[i]);
        let step = (bytes.len() - last) / 255;
        if step == 0 {
            return;
        }
        let mut lut = [0u8; 256];
        let mut acc = step / 2;
        for (level, &h) in hist.iter().enumerate() {
            lut[level] = (acc / step).min(255) as u8;
            acc += h;
        }
        for (v, b) in plane.iter_mut().zip(bytes) {
            *v = byte_to_unit(lut[b as usize]);
        }
    })
}
