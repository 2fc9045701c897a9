//! Matchers and the shepherd abstraction.
//!
//! A shepherd turns a probe set and a gallery set into a similarity matrix.
//! Built-in matchers embed each image into a feature vector; pairwise cosine
//! distances are then normalized by the largest distance in the matrix so
//! that `s = 1 - d / max(d)`.

pub mod lbp;

use rand::seq::index;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::IdentitySet;
use crate::image::ImageBuffer;
use crate::matrix::SimilarityMatrix;
use crate::seed;

/// Side of the gray image fed to the random projection.
pub const PROJECTION_SIDE: usize = 32;
/// Input dimension of the random projection (`PROJECTION_SIDE²`).
pub const PROJECTION_INPUT: usize = PROJECTION_SIDE * PROJECTION_SIDE;

/// Anything that can score probes against a gallery.
pub trait Shepherd: Send + Sync {
    fn name(&self) -> String;

    /// Probe x gallery similarity matrix, rows in probe order.
    fn similarity(&self, probes: &IdentitySet, gallery: &IdentitySet) -> Result<SimilarityMatrix>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Gray, bilinear-resized to `side x side`, flattened row-major.
pub fn embed_pixels(image: &ImageBuffer, side: usize) -> Result<FeatureVector> {
    if side == 0 {
        return Err(Error::Config("pixel matcher side must be at least 1".into()));
    }
    Ok(FeatureVector(image.resize_gray(side, side).pixels().to_vec()))
}

/// Uniform LBP histograms, `59 * grid²` values.
pub fn embed_lbp(image: &ImageBuffer, grid: usize) -> Result<FeatureVector> {
    lbp::lbp_histogram(image, grid).map(FeatureVector)
}

/// Linear matcher `P · x` over a 32x32 gray rendition of the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomProjection {
    dim: usize,
    seed: u64,
    /// Row-major `dim x 1024` weights.
    weights: Vec<f64>,
}

impl RandomProjection {
    /// Draws `P` from `N(0, 1/1024)` with a generator seeded by `seed`.
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("projection dimension must be at least 1".into()));
        }
        let normal = Normal::new(0.0, 1.0 / (PROJECTION_INPUT as f64).sqrt()).expect("finite standard deviation");
        let mut rng = seed::rng(seed);
        let weights = (0..dim * PROJECTION_INPUT).map(|_| normal.sample(&mut rng)).collect();
        Ok(Self { dim, seed, weights })
    }

    /// Projection with explicit weights; `weights.len()` must be
    /// `dim * 1024`.
    pub fn from_weights(dim: usize, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || weights.len() != dim * PROJECTION_INPUT {
            return Err(Error::Dimension(format!(
                "projection of dimension {dim} needs {} weights, got {}",
                dim * PROJECTION_INPUT,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Input("projection weights must be finite".into()));
        }
        Ok(Self { dim, seed: 0, weights })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn project(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), PROJECTION_INPUT);
        self.weights
            .chunks_exact(PROJECTION_INPUT)
            .map(|row| row.iter().zip(input).map(|(w, x)| w * x).sum())
            .collect()
    }
}

pub fn embed_random_projection(image: &ImageBuffer, projection: &RandomProjection) -> FeatureVector {
    let x = image.resize_gray(PROJECTION_SIDE, PROJECTION_SIDE);
    FeatureVector(projection.project(x.pixels()))
}

/// The built-in matchers.
#[derive(Debug, Clone, PartialEq)]
pub enum Matcher {
    Pixels { side: usize },
    Lbp { grid: usize },
    RandomProjection(RandomProjection),
}

impl Matcher {
    pub fn pixels(side: usize) -> Self {
        Matcher::Pixels { side }
    }

    pub fn lbp(grid: usize) -> Self {
        Matcher::Lbp { grid }
    }

    pub fn random_projection(dim: usize, seed: u64) -> Result<Self> {
        RandomProjection::new(dim, seed).map(Matcher::RandomProjection)
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Matcher::Pixels { .. } => "pixels",
            Matcher::Lbp { .. } => "lbp",
            Matcher::RandomProjection(_) => "random-projection",
        }
    }

    pub fn embed(&self, image: &ImageBuffer) -> Result<FeatureVector> {
        match self {
            Matcher::Pixels { side } => embed_pixels(image, *side),
            Matcher::Lbp { grid } => embed_lbp(image, *grid),
            Matcher::RandomProjection(p) => Ok(embed_random_projection(image, p)),
        }
    }

    /// Flat parameter vector, for matchers that have one.
    pub fn parameters(&self) -> Option<&[f64]> {
        match self {
            Matcher::RandomProjection(p) => Some(p.weights()),
            _ => None,
        }
    }

    /// Copy of the matcher with `⌊fraction · len⌋` parameters, picked
    /// uniformly without replacement, replaced by independent `N(0, 1)` draws.
    pub fn perturb_parameters(&self, fraction: f64, seed: u64) -> Result<Matcher> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::Config(format!(
                "perturbation fraction {fraction} is outside [0, 1]"
            )));
        }
        let Matcher::RandomProjection(p) = self else {
            return Err(Error::Unsupported(format!(
                "matcher '{}' has no parameters to perturb",
                self.kind()
            )));
        };
        let len = p.weights.len();
        let count = ((fraction * len as f64).floor() as usize).min(len);
        let mut rng = seed::rng(seed);
        let mut weights = p.weights.clone();
        for i in index::sample(&mut rng, len, count) {
            weights[i] = StandardNormal.sample(&mut rng);
        }
        Ok(Matcher::RandomProjection(RandomProjection {
            dim: p.dim,
            seed: p.seed,
            weights,
        }))
    }
}

impl Shepherd for Matcher {
    fn name(&self) -> String {
        self.kind().to_string()
    }

    fn similarity(&self, probes: &IdentitySet, gallery: &IdentitySet) -> Result<SimilarityMatrix> {
        similarity_matrix(self, probes, gallery)
    }
}

fn embed_all(matcher: &Matcher, set: &IdentitySet) -> Result<Vec<FeatureVector>> {
    set.members()
        .par_iter()
        .map(|ident| {
            matcher
                .embed(ident.image())
                .map_err(|e| e.context(format!("embedding identity '{}'", ident.id())))
        })
        .collect()
}

/// Cosine distance with the zero-vector convention: a zero vector is at
/// distance 1 from every non-zero vector and 0 from another zero vector.
/// Identical vectors are at distance exactly 0.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    match (na == 0.0, nb == 0.0) {
        (true, true) => 0.0,
        (true, false) | (false, true) => 1.0,
        (false, false) => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot / (na * nb)).clamp(0.0, 2.0)
        }
    }
}

/// Turns a distance matrix into similarities via `1 - d / max(d)`; all ones
/// when every distance is zero.
pub fn normalize_distances(rows: usize, cols: usize, distances: Vec<f64>) -> Result<SimilarityMatrix> {
    let max = distances.iter().copied().fold(0.0f64, f64::max);
    let values = if max > 0.0 {
        distances.into_iter().map(|d| (1.0 - d / max).clamp(0.0, 1.0)).collect()
    } else {
        vec![1.0; rows * cols]
    };
    SimilarityMatrix::new(rows, cols, values)
}

/// Embeds both sets and returns the normalized probe x gallery similarities.
pub fn similarity_matrix(matcher: &Matcher, probes: &IdentitySet, gallery: &IdentitySet) -> Result<SimilarityMatrix> {
    if probes.is_empty() || gallery.is_empty() {
        return Err(Error::Input("probe and gallery sets must be non-empty".into()));
    }
    let probe_features = embed_all(matcher, probes)?;
    let gallery_features = embed_all(matcher, gallery)?;
    let cols = gallery_features.len();
    let distances: Vec<f64> = probe_features
        .par_iter()
        .flat_map_iter(|p| {
            gallery_features
                .iter()
                .map(move |g| cosine_distance(p.values(), g.values()))
        })
        .collect();
    normalize_distances(probe_features.len(), cols, distances)
}
