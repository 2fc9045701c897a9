//! Image transformations `T(image, δ)` and stimulus level schedules.
//!
//! Every kind is parameterized so that `δ = 0` leaves the image untouched
//! and larger `δ` degrades it further. Stochastic kinds draw from a
//! generator keyed by `(seed, level index, identity id)`.

pub mod blur;
pub mod noise;
pub mod schedule;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::seed;

pub use blur::gaussian_blur;
pub use schedule::{log_space, LevelSchedule};

/// Base blur used by the unsharp mask of `sharpness-change`.
pub const SHARPEN_SIGMA: f64 = 1.0;

/// File listing the nominal level of each frame in a pre-rendered sequence.
pub const FRAME_LEVELS_FILE: &str = "levels.json";

#[derive(Debug, Clone, PartialEq)]
pub enum PerturbationKind {
    /// σ = δ pixels.
    GaussianBlur,
    /// Black vertical bar `⌊δ·width⌋` wide at a seeded column.
    LinearOcclusion,
    /// Each pixel becomes 0 or 1 with probability δ.
    SaltPepper,
    /// Additive `N(0, δ²)` per value.
    GaussianNoise,
    /// Additive 1/f² field with standard deviation δ.
    BrownNoise,
    /// Additive 1/f field with standard deviation δ.
    PinkNoise,
    /// `p·(1 - δ)`.
    BrightnessDecrease,
    /// `0.5 + (p - 0.5)·(1 - δ)`.
    ContrastDecrease,
    /// Unsharp mask `p + δ·(p - blur₁(p))`.
    SharpnessChange,
    /// Frames rendered ahead of time, looked up by identity and level index.
    Precomputed(Arc<FrameSequence>),
}

impl PerturbationKind {
    /// Every kind that needs no external data, in documentation order.
    pub const BUILT_IN: [&'static str; 9] = [
        "gaussian-blur",
        "linear-occlusion",
        "salt-pepper",
        "gaussian-noise",
        "brown-noise",
        "pink-noise",
        "brightness-decrease",
        "contrast-decrease",
        "sharpness-change",
    ];

    pub fn name(&self) -> &'static str {
        match self {
            PerturbationKind::GaussianBlur => "gaussian-blur",
            PerturbationKind::LinearOcclusion => "linear-occlusion",
            PerturbationKind::SaltPepper => "salt-pepper",
            PerturbationKind::GaussianNoise => "gaussian-noise",
            PerturbationKind::BrownNoise => "brown-noise",
            PerturbationKind::PinkNoise => "pink-noise",
            PerturbationKind::BrightnessDecrease => "brightness-decrease",
            PerturbationKind::ContrastDecrease => "contrast-decrease",
            PerturbationKind::SharpnessChange => "sharpness-change",
            PerturbationKind::Precomputed(_) => "precomputed",
        }
    }

    /// Whether δ is a fraction restricted to `[0, 1]`.
    pub fn is_fractional(&self) -> bool {
        matches!(
            self,
            PerturbationKind::LinearOcclusion
                | PerturbationKind::SaltPepper
                | PerturbationKind::BrightnessDecrease
                | PerturbationKind::ContrastDecrease
        )
    }

    pub fn validate_level(&self, level: f64) -> Result<()> {
        let ok = match self {
            PerturbationKind::Precomputed(_) => level.is_finite(),
            k if k.is_fractional() => (0.0..=1.0).contains(&level),
            _ => level.is_finite() && level >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "level {level} is outside the domain of {}",
                self.name()
            )))
        }
    }

    /// Default `(b_l, b_u)` for curves of this kind.
    pub fn default_bounds(&self) -> (f64, f64) {
        match self {
            PerturbationKind::GaussianBlur => (0.0, 16.0),
            PerturbationKind::GaussianNoise | PerturbationKind::BrownNoise | PerturbationKind::PinkNoise => (0.0, 0.5),
            PerturbationKind::SharpnessChange => (0.0, 10.0),
            PerturbationKind::Precomputed(seq) => (seq.levels[0], seq.levels[seq.levels.len() - 1]),
            _ => (0.0, 1.0),
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gaussian-blur" => PerturbationKind::GaussianBlur,
            "linear-occlusion" => PerturbationKind::LinearOcclusion,
            "salt-pepper" => PerturbationKind::SaltPepper,
            "gaussian-noise" => PerturbationKind::GaussianNoise,
            "brown-noise" => PerturbationKind::BrownNoise,
            "pink-noise" => PerturbationKind::PinkNoise,
            "brightness-decrease" => PerturbationKind::BrightnessDecrease,
            "contrast-decrease" => PerturbationKind::ContrastDecrease,
            "sharpness-change" => PerturbationKind::SharpnessChange,
            "precomputed" => {
                return Err(Error::Config(
                    "precomputed perturbations need a frame sequence directory".into(),
                ))
            }
            other => return Err(Error::Config(format!("unknown perturbation kind '{other}'"))),
        })
    }
}

/// Pre-rendered stimuli laid out as `<root>/<identity-id>/<level-index>.png`
/// with the nominal level of each index listed in `<root>/levels.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    root: PathBuf,
    levels: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct FrameLevels {
    levels: Vec<f64>,
}

impl FrameSequence {
    pub fn new(root: impl Into<PathBuf>, levels: Vec<f64>) -> Result<Self> {
        LevelSchedule::from_levels(levels.clone())?;
        Ok(Self {
            root: root.into(),
            levels,
        })
    }

    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let path = root.join(FRAME_LEVELS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::Load {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let parsed: FrameLevels = serde_json::from_str(&text).map_err(|e| Error::Load {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        Self::new(root, parsed.levels)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn schedule(&self) -> LevelSchedule {
        LevelSchedule::from_levels(self.levels.clone()).expect("validated on construction")
    }

    pub fn frame_path(&self, identity: &str, level_index: usize) -> PathBuf {
        self.root.join(identity).join(format!("{level_index}.png"))
    }

    pub fn load_frame(&self, identity: &str, level_index: usize) -> Result<ImageBuffer> {
        if level_index >= self.levels.len() {
            return Err(Error::Data(format!(
                "level index {level_index} beyond the {} rendered levels",
                self.levels.len()
            )));
        }
        let path = self.frame_path(identity, level_index);
        if !path.is_file() {
            return Err(Error::Data(format!(
                "missing frame for identity '{identity}' at level {level_index}: {}",
                path.display()
            )));
        }
        crate::io::decode_image(&path)
    }
}

/// A transformation and its level. `seed` is the global seed; the draw for
/// a given image is further keyed by its [`StimulusKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub level: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, level: f64, seed: u64) -> Result<Self> {
        kind.validate_level(level)?;
        Ok(Self { kind, level, seed })
    }
}

/// Which image at which schedule position a perturbation is applied to.
#[derive(Debug, Clone, Copy)]
pub struct StimulusKey<'a> {
    pub identity: &'a str,
    pub level_index: usize,
}

/// Applies the perturbation. Level 0 returns the input bit for bit.
pub fn apply(image: &ImageBuffer, spec: &PerturbationSpec, key: StimulusKey<'_>) -> Result<ImageBuffer> {
    spec.kind.validate_level(spec.level)?;
    let level = spec.level;
    if level == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = seed::rng(seed::stimulus_seed(spec.seed, key.level_index, key.identity));
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let out = match &spec.kind {
        PerturbationKind::GaussianBlur => gaussian_blur(image, level),
        PerturbationKind::LinearOcclusion => {
            let bar = ((level * w as f64).floor() as usize).min(w);
            if bar == 0 {
                return Ok(image.clone());
            }
            let start = rng.random_range(0..=w - bar);
            let mut pixels = image.pixels().to_vec();
            for y in 0..h {
                let row = (y * w + start) * c;
                pixels[row..row + bar * c].fill(0.0);
            }
            ImageBuffer::from_clamped(w, h, c, pixels)
        }
        PerturbationKind::SaltPepper => {
            let mut pixels = image.pixels().to_vec();
            for px in pixels.chunks_exact_mut(c) {
                if rng.random::<f64>() < level {
                    let v = if rng.random::<bool>() { 1.0 } else { 0.0 };
                    px.fill(v);
                }
            }
            ImageBuffer::from_clamped(w, h, c, pixels)
        }
        PerturbationKind::GaussianNoise => {
            let normal = Normal::new(0.0, level).map_err(|e| Error::Config(e.to_string()))?;
            image_plus(image, |_| normal.sample(&mut rng))
        }
        PerturbationKind::PinkNoise | PerturbationKind::BrownNoise => {
            let exponent = if matches!(spec.kind, PerturbationKind::PinkNoise) {
                1.0
            } else {
                2.0
            };
            let field = noise::colored_noise(w, h, exponent, level, &mut rng);
            image_plus(image, |i| field[i / c])
        }
        PerturbationKind::BrightnessDecrease => image.map(|p| p * (1.0 - level)),
        PerturbationKind::ContrastDecrease => image.map(|p| 0.5 + (p - 0.5) * (1.0 - level)),
        PerturbationKind::SharpnessChange => {
            let base = gaussian_blur(image, SHARPEN_SIGMA);
            let pixels = image
                .pixels()
                .iter()
                .zip(base.pixels())
                .map(|(&p, &b)| p + level * (p - b))
                .collect();
            ImageBuffer::from_clamped(w, h, c, pixels)
        }
        PerturbationKind::Precomputed(seq) => seq.load_frame(key.identity, key.level_index)?,
    };
    Ok(out)
}

/// Adds `noise(i)` to value `i`, clamping.
fn image_plus(image: &ImageBuffer, mut noise: impl FnMut(usize) -> f64) -> ImageBuffer {
    let pixels = image.pixels().iter().enumerate().map(|(i, &p)| p + noise(i)).collect();
    ImageBuffer::from_clamped(image.width(), image.height(), image.channels(), pixels)
}
