//! Item-response points, curves, chance normalization and run ensembles.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::identity::IdentitySet;
use crate::matrix::{SimilarityMatrix, Threshold};
use crate::perturb::{apply, LevelSchedule, PerturbationKind, PerturbationSpec, StimulusKey};
use crate::seed;
use crate::shepherd::Shepherd;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ItemResponsePoint {
    pub level: f64,
    /// Fraction of probes whose own gallery entry clears the threshold.
    pub match_rate: f64,
    /// Fraction of probes whose best-scoring gallery entry is their own.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_one_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub matcher: String,
    pub threshold: f64,
    pub seed: u64,
    /// Number of sheep in the gallery.
    pub sheep: usize,
    /// Probes examined per level.
    pub sampled: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResponseCurve {
    pub kind: String,
    pub lower: f64,
    pub upper: f64,
    pub points: Vec<ItemResponsePoint>,
    pub normalized: bool,
    /// Match rate expected from guessing, `1 / |sheep|`.
    pub chance: f64,
    pub metadata: CurveMetadata,
}

impl ItemResponseCurve {
    pub fn levels(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.level).collect()
    }

    pub fn match_rates(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.match_rate).collect()
    }

    pub fn label(&self) -> String {
        self.metadata
            .label
            .clone()
            .unwrap_or_else(|| format!("{} / {}", self.metadata.matcher, self.kind))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PointOptions {
    /// Probes examined per level (`w`); all sheep when `None`.
    pub sample: Option<usize>,
    /// Also report the rank-one rate.
    pub rank_one: bool,
}

/// Gallery column of each probe row plus the per-row match decisions.
fn rates(s: &SimilarityMatrix, columns: &[usize], threshold: Threshold, rank_one: bool) -> (f64, Option<f64>) {
    let rows = columns.len() as f64;
    let matched = columns
        .iter()
        .enumerate()
        .filter(|&(r, &c)| s.get(r, c) >= threshold.value())
        .count();
    let rank_one = rank_one.then(|| {
        let hits = columns
            .iter()
            .enumerate()
            .filter(|&(r, &c)| {
                let row = s.row(r);
                let best = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
                best == c
            })
            .count();
        hits as f64 / rows
    });
    (matched as f64 / rows, rank_one)
}

/// Probe indices for a level: every sheep, or a seeded subset of size `w`.
fn probe_indices(sheep: usize, sample: Option<usize>, seed: u64, level_index: usize) -> Result<Vec<usize>> {
    match sample {
        None => Ok((0..sheep).collect()),
        Some(w) if w == 0 || w > sheep => Err(Error::Config(format!("sample size {w} must lie in [1, {sheep}]"))),
        Some(w) if w == sheep => Ok((0..sheep).collect()),
        Some(w) => {
            let mut rng = seed::rng(seed::derive(seed, &[level_index as u64, 0x5a4d_504c]));
            let mut picked = index::sample(&mut rng, sheep, w).into_vec();
            picked.sort_unstable();
            Ok(picked)
        }
    }
}

/// One point of an item-response curve: perturb the sheep at `level`,
/// score the probes against the unperturbed sheep and count diagonal
/// entries at or above `threshold`.
#[allow(clippy::too_many_arguments)]
pub fn irt_point(
    shepherd: &dyn Shepherd,
    sheep: &IdentitySet,
    threshold: Threshold,
    kind: &PerturbationKind,
    level: f64,
    level_index: usize,
    seed: u64,
    options: PointOptions,
) -> Result<ItemResponsePoint> {
    if sheep.is_empty() {
        return Err(Error::Input("item-response points need at least one sheep".into()));
    }
    let spec = PerturbationSpec::new(kind.clone(), level, seed)?;
    let columns = probe_indices(sheep.len(), options.sample, seed, level_index)?;
    let probes = columns
        .par_iter()
        .map(|&i| {
            let ident = &sheep.members()[i];
            let key = StimulusKey {
                identity: ident.id(),
                level_index,
            };
            apply(ident.image(), &spec, key)
                .map(|img| ident.with_image(img))
                .map_err(|e| e.context(format!("perturbing '{}' at level {level_index}", ident.id())))
        })
        .collect::<Result<Vec<_>>>()?;
    let probes = IdentitySet::new(probes)?;
    let s = shepherd
        .similarity(&probes, sheep)
        .map_err(|e| e.context(format!("scoring level {level_index} (δ = {level})")))?;
    if s.rows() != columns.len() || s.cols() != sheep.len() {
        return Err(Error::Dimension(format!(
            "shepherd returned {}x{} for {} probes and {} gallery entries",
            s.rows(),
            s.cols(),
            columns.len(),
            sheep.len()
        )));
    }
    let (match_rate, rank_one_rate) = rates(&s, &columns, threshold, options.rank_one);
    Ok(ItemResponsePoint {
        level,
        match_rate,
        rank_one_rate,
    })
}

/// A curve failed part-way; `partial` holds the points before the failure.
#[derive(Debug, thiserror::Error)]
#[error("curve aborted after {} points: {source}", partial.len())]
pub struct CurveAborted {
    pub partial: Vec<ItemResponsePoint>,
    #[source]
    pub source: Error,
}

/// Evaluates [`irt_point`] at every level of `schedule`. Points may run in
/// parallel but are always returned in schedule order.
#[allow(clippy::too_many_arguments)]
pub fn irt_curve(
    shepherd: &dyn Shepherd,
    sheep: &IdentitySet,
    threshold: Threshold,
    kind: &PerturbationKind,
    schedule: &LevelSchedule,
    seed: u64,
    options: PointOptions,
) -> std::result::Result<ItemResponseCurve, CurveAborted> {
    let results: Vec<Result<ItemResponsePoint>> = schedule
        .levels
        .par_iter()
        .enumerate()
        .map(|(j, &level)| irt_point(shepherd, sheep, threshold, kind, level, j, seed, options))
        .collect();
    let mut points = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(p) => points.push(p),
            Err(source) => {
                return Err(CurveAborted {
                    partial: points,
                    source,
                })
            }
        }
    }
    Ok(ItemResponseCurve {
        kind: kind.name().to_string(),
        lower: schedule.lower,
        upper: schedule.upper,
        points,
        normalized: false,
        chance: 1.0 / sheep.len() as f64,
        metadata: CurveMetadata {
            matcher: shepherd.name(),
            threshold: threshold.value(),
            seed,
            sheep: sheep.len(),
            sampled: options.sample.unwrap_or(sheep.len()),
            label: None,
        },
    })
}

/// `α' = (α - c) / (1 - c)` with `c = 1 / |sheep|`, so guessing maps to 0.
pub fn normalize_rate(rate: f64, chance: f64) -> f64 {
    (rate - chance) / (1.0 - chance)
}

pub fn chance_normalize(curve: &ItemResponseCurve) -> Result<ItemResponseCurve> {
    if curve.normalized {
        return Err(Error::Config("curve is already chance-normalized".into()));
    }
    if curve.metadata.sheep < 2 {
        return Err(Error::Config(format!(
            "chance normalization needs at least 2 sheep, curve has {}",
            curve.metadata.sheep
        )));
    }
    let mut out = curve.clone();
    for p in &mut out.points {
        p.match_rate = normalize_rate(p.match_rate, curve.chance);
        p.rank_one_rate = p.rank_one_rate.map(|r| normalize_rate(r, curve.chance));
    }
    out.normalized = true;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEnsemble {
    pub runs: Vec<ItemResponseCurve>,
    /// Per-level mean match rate, carried as a curve.
    pub mean: ItemResponseCurve,
    /// Per-level standard error of the match rate.
    pub stderr: Vec<f64>,
}

impl CurveEnsemble {
    pub fn levels(&self) -> Vec<f64> {
        self.mean.levels()
    }

    /// Mean over levels of the between-run sample variance.
    pub fn mean_variance(&self) -> f64 {
        let runs = self.runs.len() as f64;
        self.stderr.iter().map(|se| se * se * runs).sum::<f64>() / self.stderr.len() as f64
    }
}

/// Per-level mean and standard error `sd / √runs` (sample variance).
pub fn ensemble(curves: &[ItemResponseCurve]) -> Result<CurveEnsemble> {
    if curves.len() < 2 {
        return Err(Error::Config(format!(
            "an ensemble needs at least 2 curves, got {}",
            curves.len()
        )));
    }
    let first = &curves[0];
    let levels = first.levels();
    for (i, c) in curves.iter().enumerate().skip(1) {
        if c.kind != first.kind || c.levels() != levels || c.normalized != first.normalized {
            return Err(Error::Config(format!(
                "curve {i} does not share the kind, schedule and normalization of curve 0"
            )));
        }
    }
    let runs = curves.len() as f64;
    let mut mean = first.clone();
    let mut stderr = Vec::with_capacity(levels.len());
    for (j, point) in mean.points.iter_mut().enumerate() {
        let values: Vec<f64> = curves.iter().map(|c| c.points[j].match_rate).collect();
        let m = values.iter().sum::<f64>() / runs;
        let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (runs - 1.0);
        point.match_rate = m;
        point.rank_one_rate = None;
        stderr.push(var.sqrt() / runs.sqrt());
    }
    Ok(CurveEnsemble {
        runs: curves.to_vec(),
        mean,
        stderr,
    })
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties. NaN when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::Identity;
    use crate::image::ImageBuffer;
    use crate::perturb::log_space;
    use crate::shepherd::Matcher;
    use approx::assert_relative_eq;

    fn curve(rates: &[f64], sheep: usize) -> ItemResponseCurve {
        ItemResponseCurve {
            kind: "gaussian-blur".into(),
            lower: 0.0,
            upper: 1.0,
            points: rates
                .iter()
                .enumerate()
                .map(|(i, &r)| ItemResponsePoint {
                    level: i as f64,
                    match_rate: r,
                    rank_one_rate: None,
                })
                .collect(),
            normalized: false,
            chance: 1.0 / sheep as f64,
            metadata: CurveMetadata {
                matcher: "pixels".into(),
                threshold: 0.9,
                seed: 0,
                sheep,
                sampled: sheep,
                label: None,
            },
        }
    }

    fn stripes(n: usize) -> IdentitySet {
        IdentitySet::new(
            (0..n)
                .map(|k| {
                    let img =
                        ImageBuffer::from_fn(16, 16, |x, y| if (x + y * (k + 1)) % (k + 2) == 0 { 1.0 } else { 0.1 })
                            .unwrap();
                    Identity::new(format!("s{k}"), img)
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_level_matches_everything() {
        let sheep = stripes(6);
        let m = Matcher::pixels(16);
        let p = irt_point(
            &m,
            &sheep,
            Threshold::new(1.0).unwrap(),
            &PerturbationKind::GaussianBlur,
            0.0,
            0,
            1,
            PointOptions::default(),
        )
        .unwrap();
        assert_eq!(p.match_rate, 1.0);
    }

    #[test]
    fn single_sheep_matches_only_while_unperturbed() {
        let sheep = stripes(1);
        let m = Matcher::pixels(16);
        for level in [0.0, 0.4, 1.0] {
            let p = irt_point(
                &m,
                &sheep,
                Threshold::new(0.5).unwrap(),
                &PerturbationKind::SaltPepper,
                level,
                3,
                1,
                PointOptions::default(),
            )
            .unwrap();
            // Unperturbed, D = [[0]] and S is all ones. Any change makes the
            // lone distance the maximum, so S = [[0]].
            let expected = if level == 0.0 { 1.0 } else { 0.0 };
            assert_eq!(p.match_rate, expected, "level {level}");
        }
    }

    #[test]
    fn curve_has_one_point_per_level_in_order() {
        let sheep = stripes(4);
        let schedule = log_space(0.0, 4.0, 7).unwrap();
        let c = irt_curve(
            &Matcher::pixels(16),
            &sheep,
            Threshold::new(0.95).unwrap(),
            &PerturbationKind::GaussianBlur,
            &schedule,
            2,
            PointOptions {
                sample: None,
                rank_one: true,
            },
        )
        .unwrap();
        assert_eq!(c.levels(), schedule.levels);
        assert_eq!(c.points[0].match_rate, 1.0);
        assert_eq!(c.points[0].rank_one_rate, Some(1.0));
        assert_relative_eq!(c.chance, 0.25);
    }

    #[test]
    fn subsampled_points_use_w_probes() {
        let sheep = stripes(8);
        let opts = PointOptions {
            sample: Some(3),
            rank_one: false,
        };
        let p = irt_point(
            &Matcher::pixels(16),
            &sheep,
            Threshold::new(1.0).unwrap(),
            &PerturbationKind::GaussianBlur,
            0.0,
            0,
            0,
            opts,
        )
        .unwrap();
        assert_eq!(p.match_rate, 1.0);
        let bad = PointOptions {
            sample: Some(9),
            rank_one: false,
        };
        assert!(irt_point(
            &Matcher::pixels(16),
            &sheep,
            Threshold::new(1.0).unwrap(),
            &PerturbationKind::GaussianBlur,
            0.0,
            0,
            0,
            bad
        )
        .is_err());
    }

    #[test]
    fn failing_level_aborts_with_partial_points() {
        // LBP rejects images smaller than 3x3, but level 0 never reaches the
        // matcher's size check with a valid image; use an out-of-domain level.
        let sheep = stripes(3);
        let schedule = LevelSchedule::from_levels(vec![0.0, 0.5, 2.0]).unwrap();
        let err = irt_curve(
            &Matcher::pixels(16),
            &sheep,
            Threshold::new(0.9).unwrap(),
            &PerturbationKind::SaltPepper,
            &schedule,
            0,
            PointOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err.partial.len(), 2);
    }

    #[test]
    fn chance_normalization() {
        let c = curve(&[1.0, 0.25, 0.0], 4);
        let n = chance_normalize(&c).unwrap();
        assert!(n.normalized);
        assert_eq!(n.points[0].match_rate, 1.0);
        assert_eq!(n.points[1].match_rate, 0.0);
        assert_relative_eq!(n.points[2].match_rate, -1.0 / 3.0);

        let big = curve(&[0.5], 206);
        let n = chance_normalize(&big).unwrap();
        assert!((n.points[0].match_rate - 0.49757).abs() < 1e-5);

        assert!(chance_normalize(&curve(&[1.0], 1)).is_err());
        assert!(chance_normalize(&n).is_err());
    }

    #[test]
    fn ensemble_statistics() {
        let same = ensemble(&[curve(&[1.0, 0.5], 10), curve(&[1.0, 0.5], 10)]).unwrap();
        assert_eq!(same.stderr, vec![0.0, 0.0]);

        let e = ensemble(&[curve(&[0.4], 10), curve(&[0.6], 10)]).unwrap();
        assert_relative_eq!(e.mean.points[0].match_rate, 0.5, epsilon = 1e-15);
        assert_relative_eq!(e.stderr[0], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn ensemble_rejects_mismatch() {
        assert!(ensemble(&[curve(&[1.0], 10)]).is_err());
        assert!(ensemble(&[curve(&[1.0], 10), curve(&[1.0, 0.5], 10)]).is_err());
    }

    #[test]
    fn spearman_basics() {
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), -1.0);
        assert_relative_eq!(spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]), 0.8);
        // Ties use average ranks: x ranks 1..4, y ranks 4, 2, 2, 2.
        let rho = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(rho, -0.7745966692414834, epsilon = 1e-12);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn ensemble_mean_within_member_range(
            rates in prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 5), 2..6)
        ) {
            let curves: Vec<_> = rates.iter().map(|r| curve(r, 10)).collect();
            let e = ensemble(&curves).unwrap();
            for j in 0..5 {
                let lo = rates.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
                let hi = rates.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                let m = e.mean.points[j].match_rate;
                prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
            }
        }
    }
}
