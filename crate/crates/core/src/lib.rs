//! PixMix image augmentation and model-agnostic safety metrics.
//!
//! Randomness flows through [`RngStream`], a counter-based splittable
//! generator, so every output is a pure function of the seed, the
//! arguments and the input bytes.

pub mod adversary;
pub mod augment;
pub mod error;
pub mod fractal;
pub mod image;
pub mod metrics;
pub mod mixing;
pub mod mixing_set;
pub mod stochastic;

pub use adversary::{pgd_attack, AttackConfig, ToyModel};
pub use augment::{random_augment, AugConfig, AugOp, AugOpKind};
pub use error::{Error, Result};
pub use fractal::{generate_fractals, generate_mixing_set, FractalConfig, IfsSystem};
pub use image::{load_png, save_png, ImageTensor};
pub use metrics::{evaluate, ingest_predictions, EvalReport, PredictionRecord};
pub use mixing::{augment_dataset, pixmix, MixMode, PixMixConfig, Preset};
pub use mixing_set::{MixingManifest, MixingSource, PictureCache, SourceTag};
pub use stochastic::RngStream;
