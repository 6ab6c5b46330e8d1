//! Procedural fractal mixing pictures from random iterated function systems.
//!
//! A candidate fractal is a random contractive IFS rendered with the chaos
//! game, log-scaled and pushed through a random three-stop palette. Candidates
//! covering too little of the frame are discarded.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{save_png, ImageTensor, CHANNELS};
use crate::mixing_set::{MixingManifest, SourceTag};
use crate::stochastic::RngStream;

/// Largest singular value allowed for the linear part of a map.
pub const MAX_SINGULAR_VALUE: f64 = 0.99;
/// Orbit points discarded before accumulation.
pub const BURN_IN: usize = 20;
/// Minimum fraction of lit pixels for a rendered fractal to be kept.
pub const MIN_OCCUPANCY: f64 = 0.05;
const DET_WEIGHT_FLOOR: f64 = 0.01;
const CONTRACTION_TRIES: usize = 1000;
const DIVERGENCE_RADIUS: f64 = 1e6;
const STALL_FACTOR: usize = 50;

/// `z -> [[a, b], [c, d]] z + (e, f)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap2D {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub f: f64,
}

impl AffineMap2D {
    #[inline]
    pub fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.e,
            self.c * x + self.d * y + self.f,
        )
    }

    pub fn det(&self) -> f64 {
        self.a * self.d - self.b * self.c
    }

    /// Spectral norm of the linear part.
    pub fn max_singular_value(&self) -> f64 {
        // Singular values of a 2x2 matrix from the Frobenius norm and determinant.
        let fro2 = self.a * self.a + self.b * self.b + self.c * self.c + self.d * self.d;
        let det = self.det();
        let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0).sqrt();
        ((fro2 + disc) / 2.0).sqrt()
    }

    pub fn translation_norm(&self) -> f64 {
        self.e.hypot(self.f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IfsSystem {
    maps: Vec<AffineMap2D>,
    weights: Vec<f64>,
}

impl IfsSystem {
    /// Builds a system with selection weights proportional to `|det|`
    /// (floored at 0.01), normalized to sum to 1.
    pub fn new(maps: Vec<AffineMap2D>) -> Result<Self> {
        if !(2..=8).contains(&maps.len()) {
            return Err(Error::invalid(format!("an IFS needs 2..=8 maps, got {}", maps.len())));
        }
        if let Some(m) = maps.iter().find(|m| m.max_singular_value() >= MAX_SINGULAR_VALUE) {
            return Err(Error::invalid(format!(
                "map is not contractive (singular value {})",
                m.max_singular_value()
            )));
        }
        Ok(Self::with_det_weights(maps))
    }

    fn with_det_weights(maps: Vec<AffineMap2D>) -> Self {
        let raw: Vec<f64> = maps.iter().map(|m| m.det().abs().max(DET_WEIGHT_FLOOR)).collect();
        let total: f64 = raw.iter().sum();
        let weights = raw.iter().map(|w| w / total).collect();
        Self { maps, weights }
    }

    pub fn maps(&self) -> &[AffineMap2D] {
        &self.maps
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Radius bound `max|t| / (1 - s)` for orbits started at the origin.
    pub fn orbit_bound(&self) -> f64 {
        let s = self.maps.iter().map(AffineMap2D::max_singular_value).fold(0.0, f64::max);
        let t = self.maps.iter().map(AffineMap2D::translation_norm).fold(0.0, f64::max);
        t / (1.0 - s)
    }

    fn pick(&self, u: f64) -> &AffineMap2D {
        let mut acc = 0.0;
        for (m, w) in self.maps.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return m;
            }
        }
        self.maps.last().expect("system has maps")
    }
}

/// Samples a random contractive IFS with `map_count` maps.
pub fn sample_ifs(stream: &mut RngStream, map_count: usize) -> Result<IfsSystem> {
    if !(2..=8).contains(&map_count) {
        return Err(Error::invalid(format!("map_count must be in 2..=8, got {map_count}")));
    }
    let mut maps = Vec::with_capacity(map_count);
    for _ in 0..map_count {
        let mut m = AffineMap2D {
            a: 0.0,
            b: 0.0,
            c: 0.0,
            d: 0.0,
            e: 0.0,
            f: 0.0,
        };
        let mut accepted = false;
        for _ in 0..CONTRACTION_TRIES {
            m.a = stream.uniform_range(-1.0, 1.0);
            m.b = stream.uniform_range(-1.0, 1.0);
            m.c = stream.uniform_range(-1.0, 1.0);
            m.d = stream.uniform_range(-1.0, 1.0);
            if m.max_singular_value() < MAX_SINGULAR_VALUE {
                accepted = true;
                break;
            }
        }
        if !accepted {
            let k = 0.5 * MAX_SINGULAR_VALUE / m.max_singular_value();
            m.a *= k;
            m.b *= k;
            m.c *= k;
            m.d *= k;
        }
        m.e = stream.uniform_range(-1.0, 1.0);
        m.f = stream.uniform_range(-1.0, 1.0);
        maps.push(m);
    }
    Ok(IfsSystem::with_det_weights(maps))
}

/// Runs the chaos game from the origin and returns the retained points
/// (everything after the burn-in).
pub fn chaos_orbit(
    system: &IfsSystem,
    stream: &mut RngStream,
    points: usize,
) -> Result<Vec<(f64, f64)>> {
    let mut z = (0.0, 0.0);
    let mut out = Vec::with_capacity(points.saturating_sub(BURN_IN));
    for i in 0..points {
        z = system.pick(stream.next_uniform()).apply(z);
        let r = z.0.hypot(z.1);
        if r.is_nan() || r > DIVERGENCE_RADIUS {
            return Err(Error::ContractivityViolation { magnitude: r });
        }
        if i >= BURN_IN {
            out.push(z);
        }
    }
    Ok(out)
}

/// Square grid of visit counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    size: usize,
    counts: Vec<f64>,
}

impl DensityGrid {
    pub fn new(size: usize, counts: Vec<f64>) -> Result<Self> {
        if size == 0 || counts.len() != size * size {
            return Err(Error::invalid("density grid must be size x size with size >= 1"));
        }
        if counts.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
            return Err(Error::invalid("density must be finite and nonnegative"));
        }
        Ok(Self { size, counts })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn occupancy(&self) -> f64 {
        self.counts.iter().filter(|&&c| c > 0.0).count() as f64 / self.counts.len() as f64
    }
}

/// Accumulates orbit points over their bounding box, `y` pointing up.
pub fn accumulate(points: &[(f64, f64)], size: usize) -> DensityGrid {
    let mut counts = vec![0.0; size * size];
    if points.is_empty() {
        return DensityGrid { size, counts };
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in points {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    // Degenerate (near point-like) attractors get a box of at least 1e-3
    // relative size so floating-point jitter does not fan out over the grid.
    let min_span = 1e-3 * (1.0 + x0.abs().max(x1.abs()).max(y0.abs()).max(y1.abs()));
    let widen = |lo: &mut f64, hi: &mut f64| {
        if *hi - *lo < min_span {
            let mid = 0.5 * (*lo + *hi);
            *lo = mid - 0.5 * min_span;
            *hi = mid + 0.5 * min_span;
        }
    };
    widen(&mut x0, &mut x1);
    widen(&mut y0, &mut y1);
    let (span_x, span_y) = (x1 - x0, y1 - y0);
    let last = (size - 1) as f64;
    for &(x, y) in points {
        let col = ((x - x0) / span_x * size as f64).floor().clamp(0.0, last) as usize;
        let row = ((y1 - y) / span_y * size as f64).floor().clamp(0.0, last) as usize;
        counts[row * size + col] += 1.0;
    }
    DensityGrid { size, counts }
}

/// Chaos-game rendering of `system` into a `size x size` density grid.
pub fn render_chaos_game(
    system: &IfsSystem,
    stream: &mut RngStream,
    points: usize,
    size: usize,
) -> Result<DensityGrid> {
    if points < 1000 {
        return Err(Error::invalid(format!("need at least 1000 points, got {points}")));
    }
    if size == 0 {
        return Err(Error::invalid("render size must be >= 1"));
    }
    let orbit = chaos_orbit(system, stream, points)?;
    Ok(accumulate(&orbit, size))
}

/// Log-scaled density through a random three-stop palette; empty pixels
/// stay black and the densest pixel gets the last stop exactly.
pub fn colorize(density: &DensityGrid, stream: &mut RngStream) -> ImageTensor {
    let mut stops = [[0.0f64; 3]; 3];
    for stop in &mut stops {
        for ch in stop.iter_mut() {
            *ch = stream.uniform_range(0.15, 1.0);
        }
    }
    let max = density.counts.iter().copied().fold(0.0, f64::max);
    let norm = (1.0 + max).ln();
    let mut data = vec![0.0f32; density.size * density.size * CHANNELS];
    if max > 0.0 {
        for (px, &count) in data.chunks_exact_mut(CHANNELS).zip(&density.counts) {
            if count <= 0.0 {
                continue;
            }
            let t = ((1.0 + count).ln() / norm).min(1.0);
            let (from, to, local) = if t < 0.5 {
                (&stops[0], &stops[1], t * 2.0)
            } else {
                (&stops[1], &stops[2], t * 2.0 - 1.0)
            };
            for c in 0..CHANNELS {
                px[c] = (from[c] + (to[c] - from[c]) * local).clamp(0.0, 1.0) as f32;
            }
        }
    }
    ImageTensor::from_raw(density.size, density.size, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractalConfig {
    pub size: usize,
    /// Chaos-game iterations per output pixel.
    pub points_per_pixel: f64,
}

impl FractalConfig {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            points_per_pixel: 2.0,
        }
    }

    fn points(&self) -> usize {
        ((self.size * self.size) as f64 * self.points_per_pixel).ceil().max(1000.0) as usize
    }
}

/// A rendered candidate and the occupancy that decided its fate.
#[derive(Debug, Clone)]
pub struct FractalCandidate {
    pub image: ImageTensor,
    pub occupancy: f64,
}

/// Renders candidate number `index`, a pure function of `(stream, index)`.
pub fn render_candidate(
    stream: &RngStream,
    index: usize,
    config: &FractalConfig,
) -> Result<FractalCandidate> {
    let mut s = stream.split(index);
    let map_count = 2 + s.choose_uniform(7)?;
    let system = sample_ifs(&mut s, map_count)?;
    let density = render_chaos_game(&system, &mut s, config.points(), config.size)?;
    Ok(FractalCandidate {
        occupancy: density.occupancy(),
        image: colorize(&density, &mut s),
    })
}

/// Generates `count` fractals that pass the occupancy filter.
///
/// Candidates are indexed `0, 1, 2, ...`; the accepted set is the first
/// `count` passing indices, so the result does not depend on the thread pool.
pub fn generate_fractals(
    stream: &RngStream,
    count: usize,
    config: &FractalConfig,
) -> Result<Vec<ImageTensor>> {
    if count == 0 {
        return Err(Error::invalid("fractal count must be >= 1"));
    }
    let budget = count * STALL_FACTOR;
    let batch = rayon::current_num_threads().max(1) * 4;
    let mut accepted = Vec::with_capacity(count);
    let mut next = 0;
    while accepted.len() < count {
        if next >= budget {
            return Err(Error::GenerationStalled {
                requested: count,
                accepted: accepted.len(),
                tried: next,
            });
        }
        let end = (next + batch).min(budget);
        let rendered: Vec<Result<FractalCandidate>> = (next..end)
            .into_par_iter()
            .map(|i| render_candidate(stream, i, config))
            .collect();
        for cand in rendered {
            let cand = cand?;
            if cand.occupancy >= MIN_OCCUPANCY && accepted.len() < count {
                accepted.push(cand.image);
            }
        }
        next = end;
    }
    log::debug!("accepted {count} fractals from {next} rendered candidates");
    Ok(accepted)
}

/// Writes `fractal_%06d.png` files plus `manifest.json` into `out_dir`.
pub fn generate_mixing_set(
    stream: &RngStream,
    count: usize,
    config: &FractalConfig,
    out_dir: &Path,
) -> Result<MixingManifest> {
    let images = generate_fractals(stream, count, config)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    images
        .par_iter()
        .enumerate()
        .try_for_each(|(i, img)| save_png(img, out_dir.join(format!("fractal_{i:06}.png"))))?;
    let (manifest, report) = MixingManifest::build(&[(out_dir.to_path_buf(), SourceTag::Fractal)])?;
    debug_assert!(report.failures.is_empty());
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}
