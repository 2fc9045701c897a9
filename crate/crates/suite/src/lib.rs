//! Seeded synthetic datasets used by the acceptance suite and handy for
//! trying the harness without real images.

use psyphy_core::seed::rng;
use psyphy_core::{Identity, IdentitySet, ImageBuffer, Result, SimilarityMatrix};
use rand::Rng;

/// `n` grayscale "faces" on a `size`×`size` canvas, each a sum of six
/// Gaussian blobs over a dim background.
pub fn blob_faces(n: usize, size: usize, seed: u64) -> Result<IdentitySet> {
    let mut rng = rng(seed);
    let s = size as f64;
    let members = (0..n)
        .map(|i| {
            let blobs: Vec<[f64; 4]> = (0..6)
                .map(|_| {
                    [
                        rng.random_range(0.15..0.85) * s,
                        rng.random_range(0.15..0.85) * s,
                        rng.random_range(s / 16.0..s / 6.0),
                        rng.random_range(0.3..0.8),
                    ]
                })
                .collect();
            let img = ImageBuffer::from_fn(size, size, |x, y| {
                let v: f64 = blobs
                    .iter()
                    .map(|&[cx, cy, w, a]| {
                        let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                        a * (-d2 / (2.0 * w * w)).exp()
                    })
                    .sum();
                (0.1 + v).min(1.0)
            })?;
            Ok(Identity::new(format!("face{i:04}"), img))
        })
        .collect::<Result<Vec<_>>>()?;
    IdentitySet::new(members)
}

/// Pixel indices lit in each pattern of [`sparse_patterns`].
pub fn sparse_pattern_indices(n: usize, side: usize, lit: usize, max_cosine: f64, seed: u64) -> Vec<Vec<usize>> {
    let pixels = side * side;
    assert!(lit > 0 && lit <= pixels, "cannot light {lit} of {pixels} pixels");
    let max_overlap = (max_cosine * lit as f64).floor() as usize;
    let mut rng = rng(seed);
    let mut accepted: Vec<Vec<bool>> = Vec::with_capacity(n);
    let mut indices = Vec::with_capacity(n);
    while indices.len() < n {
        let picked = rand::seq::index::sample(&mut rng, pixels, lit).into_vec();
        let clashes = accepted
            .iter()
            .any(|mask| picked.iter().filter(|&&p| mask[p]).count() > max_overlap);
        if clashes {
            continue;
        }
        let mut mask = vec![false; pixels];
        picked.iter().for_each(|&p| mask[p] = true);
        accepted.push(mask);
        let mut sorted = picked;
        sorted.sort_unstable();
        indices.push(sorted);
    }
    indices
}

/// `n` binary `side`×`side` images with `lit` pixels on. Candidates whose
/// pixel cosine with an accepted pattern exceeds `max_cosine` are redrawn.
pub fn sparse_patterns(n: usize, side: usize, lit: usize, max_cosine: f64, seed: u64) -> Result<IdentitySet> {
    let members = sparse_pattern_indices(n, side, lit, max_cosine, seed)
        .into_iter()
        .enumerate()
        .map(|(i, on)| {
            let mut pixels = vec![0.0; side * side];
            on.iter().for_each(|&p| pixels[p] = 1.0);
            Ok(Identity::new(
                format!("pattern{i:04}"),
                ImageBuffer::new(side, side, 1, pixels)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    IdentitySet::new(members)
}

/// Symmetric `n`×`n` matrix with unit diagonal and off-diagonal entries
/// uniform on `[0, 1)`.
pub fn random_symmetric(n: usize, seed: u64) -> Result<SimilarityMatrix> {
    let mut rng = rng(seed);
    let mut values = vec![1.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = rng.random();
            values[i * n + j] = v;
            values[j * n + i] = v;
        }
    }
    SimilarityMatrix::new(n, n, values)
}

/// Identities with 1×1 placeholder images, for herding a precomputed matrix.
pub fn placeholders(n: usize) -> Result<IdentitySet> {
    let members = (0..n)
        .map(|i| Ok(Identity::new(format!("id{i}"), ImageBuffer::filled(1, 1, 0.5)?)))
        .collect::<Result<Vec<_>>>()?;
    IdentitySet::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_patterns_respect_the_overlap_cap() {
        let sets = sparse_pattern_indices(60, 16, 10, 0.2, 3);
        for a in 0..sets.len() {
            for b in a + 1..sets.len() {
                let shared = sets[a].iter().filter(|p| sets[b].contains(p)).count();
                assert!(shared <= 2);
            }
        }
    }

    #[test]
    fn generators_are_seeded() {
        let a = blob_faces(3, 16, 9).unwrap();
        let b = blob_faces(3, 16, 9).unwrap();
        assert_eq!(a.members()[2].image(), b.members()[2].image());
        assert_eq!(random_symmetric(5, 1).unwrap(), random_symmetric(5, 1).unwrap());
    }

    #[test]
    fn random_symmetric_has_unit_diagonal() {
        let s = random_symmetric(6, 2).unwrap();
        for i in 0..6 {
            assert_eq!(s.get(i, i), 1.0);
            for j in 0..6 {
                assert_eq!(s.get(i, j), s.get(j, i));
            }
        }
    }
}
