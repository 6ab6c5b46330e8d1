//! Seeded, splittable randomness.
//!
//! Every random decision in the crate flows through an [`RngStream`]. A stream
//! is identified by a 64-bit seed plus a path of labels; each draw is a pure
//! function of `(seed, label path, counter)`, so a stream can be re-derived
//! anywhere (another thread, another process) and will replay the same
//! sequence. Child streams obtained with [`RngStream::split`] share no state
//! with their parent.

use std::fmt;

use crate::error::{Error, Result};

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const SEED_SALT: u64 = 0x5851_f42d_4c95_7f2d;
const KEY_SALT: u64 = 0xd1b5_4a32_d192_ed03;

/// Smallest distance Beta draws keep from the interval endpoints.
pub const BETA_ENDPOINT_CLAMP: f64 = 1e-12;

/// Stafford's "Mix13" finalizer, the output function of SplitMix64.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One element of a stream's label path.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Label {
    Str(String),
    Int(u64),
}

impl Label {
    fn digest(&self) -> u64 {
        match self {
            Label::Str(s) => {
                // FNV-1a, prefixed with a tag and the length so "1" and 1 differ.
                let mut h: u64 = 0xcbf2_9ce4_8422_2325;
                let mut eat = |b: u8| {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                };
                eat(0x01);
                for b in (s.len() as u64).to_le_bytes() {
                    eat(b);
                }
                for b in s.bytes() {
                    eat(b);
                }
                mix64(h)
            }
            Label::Int(v) => mix64(mix64(*v ^ 0x02) ^ GOLDEN_GAMMA),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Str(s) => f.write_str(s),
            Label::Int(v) => write!(f, "{v}"),
        }
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label::Str(s.to_owned())
    }
}

impl From<String> for Label {
    fn from(s: String) -> Self {
        Label::Str(s)
    }
}

impl From<&String> for Label {
    fn from(s: &String) -> Self {
        Label::Str(s.clone())
    }
}

impl From<u64> for Label {
    fn from(v: u64) -> Self {
        Label::Int(v)
    }
}

impl From<usize> for Label {
    fn from(v: usize) -> Self {
        Label::Int(v as u64)
    }
}

impl From<u32> for Label {
    fn from(v: u32) -> Self {
        Label::Int(u64::from(v))
    }
}

/// A counter-based random stream.
///
/// Cloning a stream duplicates its position: both copies replay the same
/// future draws. Use [`split`](Self::split) to obtain independent children.
#[derive(Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    label_path: Vec<Label>,
    key: u64,
    whitening: u64,
    counter: u64,
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path: Vec<String> = self.label_path.iter().map(ToString::to_string).collect();
        f.debug_struct("RngStream")
            .field("seed", &self.seed)
            .field("label_path", &path.join("/"))
            .field("counter", &self.counter)
            .finish()
    }
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::from_key(seed, Vec::new(), mix64(seed ^ SEED_SALT))
    }

    fn from_key(seed: u64, label_path: Vec<Label>, key: u64) -> Self {
        Self {
            seed,
            label_path,
            key,
            whitening: mix64(key ^ KEY_SALT),
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label_path(&self) -> &[Label] {
        &self.label_path
    }

    /// Derives the child stream `label_path + [label]`.
    ///
    /// The child depends only on the parent's seed and label path, never on
    /// how many draws the parent has made.
    pub fn split(&self, label: impl Into<Label>) -> RngStream {
        let label = label.into();
        let key = mix64(self.key ^ mix64(label.digest().wrapping_add(GOLDEN_GAMMA)));
        let mut path = self.label_path.clone();
        path.push(label);
        Self::from_key(self.seed, path, key)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        let x = mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)));
        mix64(x ^ self.whitening)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `(0, 1)`; never returns an endpoint.
    #[inline]
    fn next_open_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }

    /// Fair coin.
    pub fn coin(&mut self) -> bool {
        self.next_u64() >> 63 == 1
    }

    /// Uniform integer in `[0, n)`, unbiased (Lemire's multiply-and-reject).
    pub fn choose_uniform(&mut self, n: usize) -> Result<usize> {
        if n == 0 {
            return Err(Error::invalid("choose_uniform requires n >= 1"));
        }
        let n = n as u64;
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = u128::from(self.next_u64()) * u128::from(n);
            if (m as u64) >= threshold {
                return Ok((m >> 64) as usize);
            }
        }
    }

    /// Standard normal draw (Box–Muller, one output per pair of uniforms).
    pub fn sample_normal(&mut self) -> f64 {
        let u1 = self.next_open_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Natural log of a Gamma(shape, 1) draw.
    ///
    /// Marsaglia–Tsang squeeze/rejection for shape >= 1; for shape < 1 the
    /// draw for `shape + 1` is boosted down by `U^(1/shape)`, done in log
    /// space so tiny shapes cannot underflow to zero.
    fn log_gamma_variate(&mut self, shape: f64) -> f64 {
        if shape < 1.0 {
            let boosted = self.log_gamma_variate(shape + 1.0);
            return boosted + self.next_open_uniform().ln() / shape;
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.sample_normal();
            let t = 1.0 + c * x;
            if t <= 0.0 {
                continue;
            }
            let v = t * t * t;
            let u = self.next_open_uniform();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return (d * v).ln();
            }
        }
    }

    /// Draw from Gamma(shape, scale = 1).
    pub fn sample_gamma(&mut self, shape: f64) -> Result<f64> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::invalid(format!("gamma shape must be positive, got {shape}")));
        }
        Ok(self.log_gamma_variate(shape).exp().max(f64::MIN_POSITIVE))
    }

    /// Draw from Beta(alpha, beta) as `g1 / (g1 + g2)`, clamped into
    /// `[1e-12, 1 - 1e-12]`.
    pub fn sample_beta(&mut self, alpha: f64, beta: f64) -> Result<f64> {
        if !(alpha > 0.0 && alpha.is_finite() && beta > 0.0 && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "beta parameters must be positive, got ({alpha}, {beta})"
            )));
        }
        let l1 = self.log_gamma_variate(alpha);
        let l2 = self.log_gamma_variate(beta);
        // g1 / (g1 + g2) == 1 / (1 + exp(l2 - l1))
        let x = 1.0 / (1.0 + (l2 - l1).exp());
        Ok(x.clamp(BETA_ENDPOINT_CLAMP, 1.0 - BETA_ENDPOINT_CLAMP))
    }
}
