//! Small differentiable classifiers and an l-infinity PGD attack.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{argmax, softmax};
use crate::stochastic::RngStream;

/// Hidden width of `ToyModel::Mlp2`.
pub const HIDDEN_WIDTH: usize = 32;

/// Row-major matrix as nested rows.
pub type Matrix = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ToyModel {
    /// `W x + b`.
    Linear { weights: Matrix, bias: Vec<f64> },
    /// `W2 tanh(W1 x + b1) + b2`.
    Mlp2 {
        w1: Matrix,
        b1: Vec<f64>,
        w2: Matrix,
        b2: Vec<f64>,
    },
}

fn matvec(m: &Matrix, x: &[f64], b: &[f64]) -> Vec<f64> {
    m.iter()
        .zip(b)
        .map(|(row, bi)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bi)
        .collect()
}

/// `m^T g`.
fn matvec_t(m: &Matrix, g: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for (row, gi) in m.iter().zip(g) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += w * gi;
        }
    }
    out
}

fn check_matrix(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::Schema(format!("{name} must be {rows}x{cols}")));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Schema(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn check_vector(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::Schema(format!("{name} must have length {len}, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Schema(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn random_matrix(stream: &mut RngStream, rows: usize, cols: usize) -> Matrix {
    let scale = 1.0 / (cols as f64).sqrt();
    (0..rows)
        .map(|_| (0..cols).map(|_| scale * stream.sample_normal()).collect())
        .collect()
}

impl ToyModel {
    pub fn input_dim(&self) -> usize {
        match self {
            ToyModel::Linear { weights, .. } => weights.first().map_or(0, Vec::len),
            ToyModel::Mlp2 { w1, .. } => w1.first().map_or(0, Vec::len),
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            ToyModel::Linear { bias, .. } => bias.len(),
            ToyModel::Mlp2 { b2, .. } => b2.len(),
        }
    }

    /// Checks shapes, finiteness, `class_count >= 2` and `input_dim >= 1`.
    pub fn validate(&self) -> Result<()> {
        let (d, c) = (self.input_dim(), self.class_count());
        if c < 2 || d == 0 {
            return Err(Error::Schema(format!(
                "model needs >= 2 classes and >= 1 input, got {c} and {d}"
            )));
        }
        match self {
            ToyModel::Linear { weights, bias } => {
                check_matrix("weights", weights, c, d)?;
                check_vector("bias", bias, c)
            }
            ToyModel::Mlp2 { w1, b1, w2, b2 } => {
                check_matrix("w1", w1, HIDDEN_WIDTH, d)?;
                check_vector("b1", b1, HIDDEN_WIDTH)?;
                check_matrix("w2", w2, c, HIDDEN_WIDTH)?;
                check_vector("b2", b2, c)
            }
        }
    }

    pub fn random_linear(stream: &mut RngStream, input_dim: usize, classes: usize) -> Self {
        ToyModel::Linear {
            weights: random_matrix(stream, classes, input_dim),
            bias: (0..classes).map(|_| 0.1 * stream.sample_normal()).collect(),
        }
    }

    pub fn random_mlp2(stream: &mut RngStream, input_dim: usize, classes: usize) -> Self {
        ToyModel::Mlp2 {
            w1: random_matrix(stream, HIDDEN_WIDTH, input_dim),
            b1: (0..HIDDEN_WIDTH).map(|_| 0.1 * stream.sample_normal()).collect(),
            w2: random_matrix(stream, classes, HIDDEN_WIDTH),
            b2: (0..classes).map(|_| 0.1 * stream.sample_normal()).collect(),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has length {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(match self {
            ToyModel::Linear { weights, bias } => matvec(weights, x, bias),
            ToyModel::Mlp2 { w1, b1, w2, b2 } => {
                let h: Vec<f64> = matvec(w1, x, b1).into_iter().map(f64::tanh).collect();
                matvec(w2, &h, b2)
            }
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(x)?))
    }

    pub fn loss(&self, x: &[f64], label: usize) -> Result<f64> {
        loss_ce(&self.forward(x)?, label)
    }

    /// Gradient of the cross-entropy loss with respect to the input.
    pub fn grad_input(&self, x: &[f64], label: usize) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let d = x.len();
        let output_grad = |logits: &[f64]| -> Result<Vec<f64>> {
            check_label(label, logits.len())?;
            let mut g = softmax(logits);
            g[label] -= 1.0;
            Ok(g)
        };
        match self {
            ToyModel::Linear { weights, bias } => {
                let g = output_grad(&matvec(weights, x, bias))?;
                Ok(matvec_t(weights, &g, d))
            }
            ToyModel::Mlp2 { w1, b1, w2, b2 } => {
                let h: Vec<f64> = matvec(w1, x, b1).into_iter().map(f64::tanh).collect();
                let g = output_grad(&matvec(w2, &h, b2))?;
                let dh = matvec_t(w2, &g, h.len());
                let da: Vec<f64> = dh.iter().zip(&h).map(|(g, h)| g * (1.0 - h * h)).collect();
                Ok(matvec_t(w1, &da, d))
            }
        }
    }
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::invalid(format!("label {label} out of range for {classes} classes")));
    }
    Ok(())
}

/// `logsumexp(logits) - logits[label]`.
pub fn loss_ce(logits: &[f64], label: usize) -> Result<f64> {
    check_label(label, logits.len())?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok((lse - logits[label]).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
    pub random_start: bool,
    pub input_range: (f64, f64),
}

impl AttackConfig {
    /// Budget and step count with the default step size `2.5 * epsilon / steps`.
    pub fn new(epsilon: f64, steps: usize) -> Self {
        let step_size = if steps == 0 { 0.0 } else { 2.5 * epsilon / steps as f64 };
        AttackConfig {
            epsilon,
            steps,
            step_size,
            random_start: true,
            input_range: (0.0, 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        if self.steps > 0 && self.epsilon > 0.0 && !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("step_size must be > 0, got {}", self.step_size)));
        }
        let (lo, hi) = self.input_range;
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(Error::invalid("input_range must satisfy lo <= hi"));
        }
        Ok(())
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig::new(2.0 / 255.0, 20)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// All PGD iterates, starting point included, so `len == steps + 1`.
pub fn pgd_trajectory(
    model: &ToyModel,
    x: &[f64],
    label: usize,
    config: &AttackConfig,
    stream: &mut RngStream,
) -> Result<Vec<Vec<f64>>> {
    config.validate()?;
    model.check_input(x)?;
    check_label(label, model.class_count())?;
    let (lo, hi) = config.input_range;
    let eps = config.epsilon;
    let project = |v: f64, origin: f64| v.clamp(origin - eps, origin + eps).clamp(lo, hi);

    let mut cur: Vec<f64> = if config.random_start {
        x.iter()
            .map(|&v| project(v + stream.uniform_range(-eps, eps), v))
            .collect()
    } else {
        x.iter().map(|&v| project(v, v)).collect()
    };
    let mut path = Vec::with_capacity(config.steps + 1);
    path.push(cur.clone());
    for _ in 0..config.steps {
        let g = model.grad_input(&cur, label)?;
        for ((c, gi), &origin) in cur.iter_mut().zip(&g).zip(x) {
            *c = project(*c + config.step_size * sign(*gi), origin);
        }
        path.push(cur.clone());
    }
    Ok(path)
}

/// Untargeted l-infinity PGD on the cross-entropy loss.
///
/// Stops at the first misclassified point, `x` itself included, and
/// otherwise returns the final iterate.
pub fn pgd_attack(
    model: &ToyModel,
    x: &[f64],
    label: usize,
    config: &AttackConfig,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    let mut path = pgd_trajectory(model, x, label, config, stream)?;
    if model.predict(x)? != label {
        return Ok(x.to_vec());
    }
    for p in &path {
        if model.predict(p)? != label {
            return Ok(p.clone());
        }
    }
    Ok(path.pop().expect("trajectory holds the start point"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

fn check_dataset(model: &ToyModel, data: &[Example]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    for (i, e) in data.iter().enumerate() {
        if e.features.len() != model.input_dim() || e.label >= model.class_count() {
            return Err(Error::Schema(format!(
                "example {i} does not fit the model ({} features, label {})",
                e.features.len(),
                e.label
            )));
        }
    }
    Ok(())
}

pub fn clean_error(model: &ToyModel, data: &[Example]) -> Result<f64> {
    check_dataset(model, data)?;
    let mut wrong = 0;
    for e in data {
        wrong += usize::from(model.predict(&e.features)? != e.label);
    }
    Ok(wrong as f64 / data.len() as f64)
}

/// Error rate after attacking example `i` with `stream.split(i)`. Results do
/// not depend on the rayon pool size.
pub fn adversarial_error(
    model: &ToyModel,
    data: &[Example],
    config: &AttackConfig,
    stream: &RngStream,
) -> Result<f64> {
    check_dataset(model, data)?;
    let wrong = data
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let adv = pgd_attack(model, &e.features, e.label, config, &mut stream.split(i))?;
            Ok(usize::from(model.predict(&adv)? != e.label))
        })
        .collect::<Result<Vec<usize>>>()?;
    Ok(wrong.iter().sum::<usize>() as f64 / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub examples: usize,
    pub config: AttackConfig,
    pub clean_error: f64,
    pub adversarial_error: f64,
}

pub fn attack_report(
    model: &ToyModel,
    data: &[Example],
    config: &AttackConfig,
    stream: &RngStream,
) -> Result<AttackReport> {
    Ok(AttackReport {
        examples: data.len(),
        config: *config,
        clean_error: clean_error(model, data)?,
        adversarial_error: adversarial_error(model, data, config, stream)?,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ToyModel> {
    let model: ToyModel = read_json(path.as_ref())?;
    model.validate()?;
    Ok(model)
}

/// Reads `[{"features": [..], "label": k}, ..]`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    read_json(path.as_ref())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(weights: Matrix, bias: Vec<f64>) -> ToyModel {
        ToyModel::Linear { weights, bias }
    }

    fn no_start(epsilon: f64, steps: usize, step_size: f64) -> AttackConfig {
        AttackConfig {
            epsilon,
            steps,
            step_size,
            random_start: false,
            input_range: (0.0, 1.0),
        }
    }

    #[test]
    fn forward_examples() {
        let zero = linear(vec![vec![0.0; 3]; 2], vec![0.0; 2]);
        assert_eq!(zero.forward(&[0.3, 0.2, 0.1]).unwrap(), vec![0.0, 0.0]);
        let id = linear(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![0.0; 2]);
        assert_eq!(id.forward(&[1.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        let m = linear(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.0; 2]);
        assert_eq!(m.forward(&[1.0, 1.0]).unwrap(), vec![3.0, 7.0]);
        assert!(m.forward(&[1.0]).is_err());
    }

    #[test]
    fn loss_examples() {
        assert!((loss_ce(&[0.0; 10], 3).unwrap() - 10f64.ln()).abs() < 1e-12);
        let l = loss_ce(&[0.0, 1000.0, 0.0], 1).unwrap();
        assert!(l.is_finite() && l < 1e-300);
        assert!(loss_ce(&[0.0, 0.0], 2).is_err());
    }

    #[test]
    fn validation() {
        let mut s = RngStream::new(0);
        assert!(ToyModel::random_mlp2(&mut s, 4, 3).validate().is_ok());
        assert!(ToyModel::random_linear(&mut s, 4, 3).validate().is_ok());
        assert!(linear(vec![vec![1.0, 2.0]], vec![0.0]).validate().is_err());
        assert!(linear(vec![vec![1.0], vec![f64::NAN]], vec![0.0; 2]).validate().is_err());
        assert!(linear(vec![vec![1.0, 2.0], vec![1.0]], vec![0.0; 2]).validate().is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let root = RngStream::new(41);
        for i in 0..100usize {
            let mut s = root.split(i);
            let d = 1 + s.choose_uniform(6).unwrap();
            let c = 2 + s.choose_uniform(5).unwrap();
            let model = if i % 2 == 0 {
                ToyModel::random_linear(&mut s, d, c)
            } else {
                ToyModel::random_mlp2(&mut s, d, c)
            };
            let x: Vec<f64> = (0..d).map(|_| s.next_uniform()).collect();
            let label = s.choose_uniform(c).unwrap();
            let g = model.grad_input(&x, label).unwrap();
            let h = 1e-4;
            let fd: Vec<f64> = (0..d)
                .map(|j| {
                    let (mut xp, mut xm) = (x.clone(), x.clone());
                    xp[j] += h;
                    xm[j] -= h;
                    (model.loss(&xp, label).unwrap() - model.loss(&xm, label).unwrap()) / (2.0 * h)
                })
                .collect();
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let diff: Vec<f64> = fd.iter().zip(&g).map(|(a, b)| a - b).collect();
            let rel = norm(&diff) / norm(&fd).max(norm(&g)).max(1e-12);
            assert!(rel <= 1e-4, "model {i}: {fd:?} vs {g:?}");
        }
    }

    #[test]
    fn hand_pgd_step() {
        let m = linear(vec![vec![1.0, -1.0], vec![0.0, 0.0]], vec![0.0; 2]);
        let g = m.grad_input(&[0.5, 0.5], 0).unwrap();
        assert!((g[0] + 0.5).abs() < 1e-15 && (g[1] - 0.5).abs() < 1e-15);
        let adv = pgd_attack(&m, &[0.5, 0.5], 0, &no_start(0.1, 1, 0.1), &mut RngStream::new(0)).unwrap();
        assert!((adv[0] - 0.4).abs() < 1e-15 && (adv[1] - 0.6).abs() < 1e-15, "{adv:?}");
    }

    #[test]
    fn degenerate_attacks_are_identity() {
        let mut s = RngStream::new(5);
        let m = ToyModel::random_mlp2(&mut s, 3, 4);
        let x = [0.2, 0.7, 0.9];
        let mut cfg = AttackConfig::new(0.0, 20);
        cfg.step_size = 0.1;
        assert_eq!(pgd_attack(&m, &x, 1, &cfg, &mut s).unwrap(), x);
        let flat = linear(vec![vec![0.0; 3]; 3], vec![0.5; 3]);
        assert_eq!(pgd_attack(&flat, &x, 0, &no_start(0.3, 10, 0.1), &mut s).unwrap(), x);
    }

    #[test]
    fn defaults() {
        let cfg = AttackConfig::default();
        assert_eq!(cfg.epsilon, 2.0 / 255.0);
        assert_eq!(cfg.steps, 20);
        assert!((cfg.step_size - 2.5 * cfg.epsilon / 20.0).abs() < 1e-18);
        assert!(cfg.random_start);
        assert_eq!(cfg.input_range, (0.0, 1.0));
    }

    #[test]
    fn margin_bound_means_no_errors() {
        // w = (1, -1) vs 0: margin |x1 - x2| > eps * ||w||_1 = 0.2
        let m = linear(vec![vec![1.0, -1.0], vec![-1.0, 1.0]], vec![0.0; 2]);
        let data = vec![
            Example { features: vec![0.9, 0.3], label: 0 },
            Example { features: vec![0.1, 0.8], label: 1 },
            Example { features: vec![0.6, 0.2], label: 0 },
        ];
        let cfg = AttackConfig::new(0.1, 20);
        assert_eq!(adversarial_error(&m, &data, &cfg, &RngStream::new(1)).unwrap(), 0.0);
        assert_eq!(clean_error(&m, &data).unwrap(), 0.0);
        // epsilon 0 equals clean error
        let mislabeled = vec![Example { features: vec![0.9, 0.3], label: 1 }];
        let zero = AttackConfig::new(0.0, 5);
        assert_eq!(adversarial_error(&m, &mislabeled, &zero, &RngStream::new(1)).unwrap(), 1.0);
    }

    #[test]
    fn misclassified_points_stay_misclassified() {
        // already misclassified, so the zero perturbation is returned as is
        let m = linear(
            vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![4.0, -4.0]],
            vec![0.0, 0.1, -0.1],
        );
        let x = [0.5, 0.5];
        assert_eq!(m.predict(&x).unwrap(), 1);
        assert_eq!(pgd_attack(&m, &x, 0, &no_start(0.2, 10, 0.05), &mut RngStream::new(0)).unwrap(), x);

        let root = RngStream::new(9);
        for i in 0..300u64 {
            let mut s = root.split(i);
            let m = if i % 2 == 0 {
                ToyModel::random_linear(&mut s, 4, 5)
            } else {
                ToyModel::random_mlp2(&mut s, 4, 5)
            };
            let x: Vec<f64> = (0..4).map(|_| s.next_uniform()).collect();
            let label = s.choose_uniform(5).unwrap();
            let adv = pgd_attack(&m, &x, label, &AttackConfig::new(0.05, 20), &mut s).unwrap();
            if m.predict(&x).unwrap() != label {
                assert_ne!(m.predict(&adv).unwrap(), label, "case {i}");
            }
        }
    }

    #[test]
    fn model_json_round_trip() {
        let m = linear(vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![0.5, -0.5]);
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"kind\":\"linear\""));
        assert_eq!(serde_json::from_str::<ToyModel>(&json).unwrap(), m);
    }
}
