//! RGB image tensors, PNG I/O and resampling.

use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::stochastic::RngStream;

pub const CHANNELS: usize = 3;

/// An `height x width x 3` raster, row-major, every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// Maps an 8-bit channel value onto the unit interval.
///
/// All code that produces grid values goes through this function so that
/// grid images compare bit-exactly after round trips.
#[inline]
pub fn byte_to_unit(b: u8) -> f32 {
    (f64::from(b) / 255.0) as f32
}

/// Quantizes to the 8-bit grid, rounding halves up.
#[inline]
pub fn unit_to_byte(v: f32) -> u8 {
    (f64::from(v) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("image dims must be >= 1, got {height}x{width}")));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::invalid(format!(
                "data length {} does not match {height}x{width}x3",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    /// Builds a tensor whose values are already known to be in range.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), height * width * CHANNELS);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * CHANNELS])
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                for c in 0..CHANNELS {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    /// Applies `f` to every value and clamps the result into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImageTensor {
        let data = self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect();
        Self::from_raw(self.height, self.width, data)
    }

    /// Rounds every value onto the 8-bit grid.
    pub fn quantized(&self) -> ImageTensor {
        self.map(|v| byte_to_unit(unit_to_byte(v)))
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| unit_to_byte(v)).collect()
    }

    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, bytes.iter().map(|&b| byte_to_unit(b)).collect())
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }
}

/// Decodes PNG bytes; `path` is used only for error messages.
pub fn decode_png(bytes: &[u8], path: &Path) -> Result<ImageTensor> {
    let decode_err = |e: png::DecodingError| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(decode_err)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::Decode {
        path: path.to_path_buf(),
        message: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(decode_err)?;
    let (width, height) = (info.width as usize, info.height as usize);

    let samples_per_px = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::Decode {
                path: path.to_path_buf(),
                message: "palette was not expanded".into(),
            })
        }
    };
    let (max, sixteen) = match info.bit_depth {
        png::BitDepth::Sixteen => (65535.0f64, true),
        // EXPAND widens 1/2/4-bit samples to 8 bits
        _ => (255.0f64, false),
    };
    let sample = |i: usize| -> f64 {
        if sixteen {
            f64::from(u16::from_be_bytes([buf[2 * i], buf[2 * i + 1]])) / max
        } else {
            f64::from(buf[i]) / max
        }
    };

    let mut data = Vec::with_capacity(width * height * CHANNELS);
    for px in 0..width * height {
        let base = px * samples_per_px;
        let (rgb, alpha) = match samples_per_px {
            1 => ([sample(base); 3], None),
            2 => ([sample(base); 3], Some(sample(base + 1))),
            3 => ([sample(base), sample(base + 1), sample(base + 2)], None),
            _ => (
                [sample(base), sample(base + 1), sample(base + 2)],
                Some(sample(base + 3)),
            ),
        };
        for v in rgb {
            // Compositing over black is a plain multiply by alpha.
            let v = match alpha {
                Some(a) => v * a,
                None => v,
            };
            data.push(v as f32);
        }
    }
    ImageTensor::new(height, width, data)
}

pub fn load_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

/// Encodes as 8-bit RGB with fixed encoder settings, so equal tensors always
/// produce equal bytes.
pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let encode_err = |e: png::EncodingError| Error::Encode {
        path: Default::default(),
        message: e.to_string(),
    };
    {
        let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Fast);
        let mut writer = encoder.write_header().map_err(encode_err)?;
        writer.write_image_data(&img.to_rgb8()).map_err(encode_err)?;
        writer.finish().map_err(encode_err)?;
    }
    Ok(out)
}

pub fn save_png(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img).map_err(|e| match e {
        Error::Encode { message, .. } => Error::Encode {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    std::io::Write::write_all(&mut w, &bytes).map_err(|e| Error::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

/// Bilinear sample at continuous pixel-index coordinates with edge clamping.
#[inline]
fn sample_clamped(img: &ImageTensor, y: f64, x: f64, out: &mut [f32]) {
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    for (c, o) in out.iter_mut().enumerate() {
        let p00 = f64::from(img.get(y0, x0, c));
        let p01 = f64::from(img.get(y0, x1, c));
        let p10 = f64::from(img.get(y1, x0, c));
        let p11 = f64::from(img.get(y1, x1, c));
        let top = p00 + (p01 - p00) * fx;
        let bottom = p10 + (p11 - p10) * fx;
        *o = (top + (bottom - top) * fy).clamp(0.0, 1.0) as f32;
    }
}

/// Samples `img` at `source(y, x)` for every output pixel.
///
/// Source points farther than half a pixel outside the image read as 0;
/// points inside are bilinearly interpolated with edge clamping.
pub fn warp(
    img: &ImageTensor,
    out_h: usize,
    out_w: usize,
    source: impl Fn(f64, f64) -> (f64, f64),
) -> ImageTensor {
    let mut data = vec![0.0f32; out_h * out_w * CHANNELS];
    let (hmax, wmax) = (img.height as f64 - 0.5, img.width as f64 - 0.5);
    for y in 0..out_h {
        for x in 0..out_w {
            let (sy, sx) = source(y as f64, x as f64);
            if sy < -0.5 || sy > hmax || sx < -0.5 || sx > wmax || sy.is_nan() || sx.is_nan() {
                continue;
            }
            let base = (y * out_w + x) * CHANNELS;
            sample_clamped(img, sy, sx, &mut data[base..base + CHANNELS]);
        }
    }
    ImageTensor::from_raw(out_h, out_w, data)
}

/// Samples the rectangle `(top, left, h, w)` of `img` onto an
/// `out_h x out_w` grid with half-pixel-centred coordinates.
fn resample_region(
    img: &ImageTensor,
    (top, left, h, w): (f64, f64, f64, f64),
    out_h: usize,
    out_w: usize,
) -> ImageTensor {
    let sy = h / out_h as f64;
    let sx = w / out_w as f64;
    let mut data = vec![0.0f32; out_h * out_w * CHANNELS];
    for y in 0..out_h {
        let src_y = (top + (y as f64 + 0.5) * sy - 0.5).clamp(top, top + h - 1.0);
        for x in 0..out_w {
            let src_x = (left + (x as f64 + 0.5) * sx - 0.5).clamp(left, left + w - 1.0);
            let base = (y * out_w + x) * CHANNELS;
            sample_clamped(img, src_y, src_x, &mut data[base..base + CHANNELS]);
        }
    }
    ImageTensor::from_raw(out_h, out_w, data)
}

/// Bilinear resize with half-pixel-centred coordinate mapping.
pub fn resize_bilinear(img: &ImageTensor, out_h: usize, out_w: usize) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid(format!("resize target must be >= 1, got {out_h}x{out_w}")));
    }
    if (out_h, out_w) == img.dims() {
        return Ok(img.clone());
    }
    Ok(resample_region(
        img,
        (0.0, 0.0, img.height as f64, img.width as f64),
        out_h,
        out_w,
    ))
}

/// Ranges for [`random_resized_crop`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropConfig {
    /// Fraction of the source area kept, `(lo, hi)` within `(0, 1]`.
    pub area_fraction: (f64, f64),
    /// Width/height ratio range, sampled log-uniformly.
    pub aspect_ratio: (f64, f64),
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            area_fraction: (0.08, 1.0),
            aspect_ratio: (3.0 / 4.0, 4.0 / 3.0),
        }
    }
}

const CROP_ATTEMPTS: usize = 10;

/// Picks a random sub-rectangle and resamples it to `out_size x out_size`.
///
/// Ten attempts are made to fit a rectangle of the sampled area and aspect;
/// if none fits, the largest centred square is used.
pub fn random_resized_crop(
    img: &ImageTensor,
    stream: &mut RngStream,
    out_size: usize,
    config: &CropConfig,
) -> Result<ImageTensor> {
    let (lo, hi) = config.area_fraction;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(Error::invalid(format!("area fraction range ({lo}, {hi}) not within (0, 1]")));
    }
    let (alo, ahi) = config.aspect_ratio;
    if !(alo > 0.0 && alo <= ahi && ahi.is_finite()) {
        return Err(Error::invalid(format!("aspect ratio range ({alo}, {ahi}) is invalid")));
    }
    if out_size == 0 {
        return Err(Error::invalid("crop output size must be >= 1"));
    }
    let (h, w) = (img.height as f64, img.width as f64);
    let area = h * w;
    for _ in 0..CROP_ATTEMPTS {
        let target = area * stream.uniform_range(lo, hi);
        let ratio = stream.uniform_range(alo.ln(), ahi.ln()).exp();
        let cw = (target * ratio).sqrt().round();
        let ch = (target / ratio).sqrt().round();
        if cw >= 1.0 && ch >= 1.0 && cw <= w && ch <= h {
            let top = stream.choose_uniform((h - ch) as usize + 1)? as f64;
            let left = stream.choose_uniform((w - cw) as usize + 1)? as f64;
            return Ok(resample_region(img, (top, left, ch, cw), out_size, out_size));
        }
    }
    let side = h.min(w);
    let top = ((h - side) / 2.0).floor();
    let left = ((w - side) / 2.0).floor();
    Ok(resample_region(img, (top, left, side, side), out_size, out_size))
}

/// Clamps every value into `[0, 1]`; NaN is an error.
pub fn clip01(values: &[f32], height: usize, width: usize) -> Result<ImageTensor> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric("NaN in image data".into()));
    }
    ImageTensor::new(height, width, values.iter().map(|v| v.clamp(0.0, 1.0)).collect())
}
