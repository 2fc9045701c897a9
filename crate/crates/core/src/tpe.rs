//! One-dimensional Tree-structured Parzen Estimator on `[0, 1]`.
//!
//! After a fixed number of uniform start-up draws, the `⌈gamma·√n⌉` lowest
//! losses form the good set and the rest the bad set (Hyperopt's split). Each set becomes a
//! Parzen mixture of truncated Gaussians plus a uniform prior component, and
//! the next point is the candidate (sampled from the good mixture) with the
//! highest good/bad density ratio.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const MIN_BANDWIDTH: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    /// Uniform draws before the model is used.
    pub startup: usize,
    /// Good-set size is `⌈gamma·√n⌉` of `n` observations.
    pub gamma: f64,
    /// Samples drawn from the good density per suggestion.
    pub candidates: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            startup: 20,
            gamma: 0.25,
            candidates: 24,
        }
    }
}

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.startup < 1 {
            return Err(Error::Config("TPE startup count must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("TPE gamma {} is outside (0, 1)", self.gamma)));
        }
        if self.candidates < 1 {
            return Err(Error::Config("TPE needs at least one candidate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpeHistory {
    pub observations: Vec<Observation>,
    pub seed: u64,
}

impl TpeHistory {
    pub fn new(seed: u64) -> Self {
        Self {
            observations: Vec::new(),
            seed,
        }
    }

    /// Earliest observation with the lowest loss.
    pub fn best(&self) -> Option<Observation> {
        self.observations.iter().copied().fold(None, |best, o| match best {
            Some(b) if b.loss <= o.loss => Some(b),
            _ => Some(o),
        })
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z / std::f64::consts::SQRT_2))
}

/// Mixture of Gaussians truncated to `[0, 1]` plus one uniform component.
#[derive(Debug, Clone)]
pub struct ParzenEstimator {
    means: Vec<f64>,
    bandwidths: Vec<f64>,
    masses: Vec<f64>,
}

impl ParzenEstimator {
    pub fn new(points: &[f64]) -> Self {
        let mut means = points.to_vec();
        means.sort_by(f64::total_cmp);
        let bandwidths: Vec<f64> = (0..means.len())
            .map(|i| {
                let left = (i > 0).then(|| means[i] - means[i - 1]);
                let right = (i + 1 < means.len()).then(|| means[i + 1] - means[i]);
                let width = match (left, right) {
                    (None, None) => 1.0,
                    (l, r) => l.unwrap_or(0.0).max(r.unwrap_or(0.0)),
                };
                width.clamp(MIN_BANDWIDTH, 1.0)
            })
            .collect();
        let masses = means
            .iter()
            .zip(&bandwidths)
            .map(|(&mu, &sigma)| std_normal_cdf((1.0 - mu) / sigma) - std_normal_cdf(-mu / sigma))
            .collect();
        Self {
            means,
            bandwidths,
            masses,
        }
    }

    pub fn components(&self) -> usize {
        self.means.len() + 1
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        let kernels: f64 = self
            .means
            .iter()
            .zip(&self.bandwidths)
            .zip(&self.masses)
            .map(|((&mu, &sigma), &mass)| {
                let z = (x - mu) / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt() * mass)
            })
            .sum();
        (kernels + 1.0) / self.components() as f64
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let k = rng.random_range(0..self.components());
        if k == self.means.len() {
            return rng.random::<f64>();
        }
        let (mu, sigma) = (self.means[k], self.bandwidths[k]);
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let x = mu + sigma * z;
            if (0.0..=1.0).contains(&x) {
                return x;
            }
        }
    }
}

/// Next point to evaluate. A pure function of the history and config: the
/// generator is keyed by the history seed and the observation count.
pub fn tpe_suggest(history: &TpeHistory, config: &TpeConfig) -> f64 {
    let n = history.observations.len();
    let mut rng = seed::rng(seed::derive(history.seed, &[n as u64]));
    if n < config.startup {
        return rng.random::<f64>();
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        history.observations[a]
            .loss
            .total_cmp(&history.observations[b].loss)
            .then(a.cmp(&b))
    });
    let n_good = ((config.gamma * (n as f64).sqrt()).ceil() as usize).clamp(1, n);
    let pick = |idx: &[usize]| -> Vec<f64> { idx.iter().map(|&i| history.observations[i].t).collect() };
    let good = ParzenEstimator::new(&pick(&order[..n_good]));
    let bad = ParzenEstimator::new(&pick(&order[n_good..]));

    let mut best = (f64::NEG_INFINITY, 0.5);
    for _ in 0..config.candidates {
        let x = good.sample(&mut rng);
        let score = good.pdf(x).ln() - bad.pdf(x).ln();
        if score > best.0 {
            best = (score, x);
        }
    }
    best.1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TpeOutcome {
    pub t_best: f64,
    pub loss_best: f64,
}

/// Loss evaluation failed; the history up to the failure is kept.
#[derive(Debug, thiserror::Error)]
#[error("optimization aborted after {} evaluations: {source}", history.observations.len())]
pub struct TpeAborted {
    pub history: TpeHistory,
    #[source]
    pub source: Error,
}

/// Runs `iterations` suggest/evaluate rounds and returns the best point (the
/// earliest on ties) together with the full history.
pub fn tpe_minimize<F>(
    mut loss: F,
    iterations: usize,
    config: &TpeConfig,
    seed: u64,
) -> std::result::Result<(TpeOutcome, TpeHistory), TpeAborted>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut history = TpeHistory::new(seed);
    let fail = |history: TpeHistory, source: Error| Err(TpeAborted { history, source });
    if let Err(e) = config.validate() {
        return fail(history, e);
    }
    if iterations == 0 {
        return fail(history, Error::Config("iterations must be at least 1".into()));
    }
    for _ in 0..iterations {
        let t = tpe_suggest(&history, config);
        match loss(t) {
            Ok(l) if l.is_finite() => history.observations.push(Observation { t, loss: l }),
            Ok(l) => return fail(history, Error::Data(format!("loss at t={t} is not finite ({l})"))),
            Err(e) => return fail(history, e),
        }
    }
    let best = history.best().expect("at least one observation");
    Ok((
        TpeOutcome {
            t_best: best.t,
            loss_best: best.loss,
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_history_draws_reproducibly() {
        let cfg = TpeConfig::default();
        let a = tpe_suggest(&TpeHistory::new(42), &cfg);
        let b = tpe_suggest(&TpeHistory::new(42), &cfg);
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
        assert_ne!(a, tpe_suggest(&TpeHistory::new(43), &cfg));
    }

    #[test]
    fn degenerate_equal_losses_stay_in_range() {
        let cfg = TpeConfig::default();
        let mut h = TpeHistory::new(1);
        for i in 0..40 {
            h.observations.push(Observation {
                t: i as f64 / 39.0,
                loss: 3.0,
            });
        }
        let t = tpe_suggest(&h, &cfg);
        assert!((0.0..=1.0).contains(&t));
    }

    #[test]
    fn truncated_mixture_integrates_to_one() {
        let est = ParzenEstimator::new(&[0.02, 0.5, 0.51, 0.97]);
        let n = 200_000;
        let integral: f64 = (0..n).map(|i| est.pdf((i as f64 + 0.5) / n as f64)).sum::<f64>() / n as f64;
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }

    #[test]
    fn bandwidth_floor_applies() {
        let est = ParzenEstimator::new(&[0.5, 0.5, 0.5]);
        assert!(est.bandwidths.iter().all(|&b| b == MIN_BANDWIDTH));
    }

    #[test]
    fn suggestions_concentrate_near_optimum() {
        let cfg = TpeConfig::default();
        let mut hits = 0;
        for seed in 0..100u64 {
            let mut h = TpeHistory::new(seed);
            for i in 0..30u64 {
                let mut rng = seed::rng(seed::derive(seed ^ 0xabcdef, &[i]));
                let t: f64 = rng.random();
                h.observations.push(Observation {
                    t,
                    loss: (t - 0.8).abs(),
                });
            }
            let t = tpe_suggest(&h, &cfg);
            if (0.6..=1.0).contains(&t) {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 suggestions in [0.6, 1.0]");
    }

    #[test]
    fn monotone_tie_break_reaches_high_thresholds() {
        for seed in 0..20 {
            let (best, history) = tpe_minimize(|t| Ok(1.0 - 0.99999 * t), 250, &TpeConfig::default(), seed).unwrap();
            assert_eq!(history.observations.len(), 250);
            assert!(best.t_best >= 0.99, "seed {seed}: {}", best.t_best);
        }
    }

    #[test]
    fn constant_loss_keeps_first_point() {
        let (best, history) = tpe_minimize(|_| Ok(2.0), 50, &TpeConfig::default(), 3).unwrap();
        assert_eq!(best.t_best, history.observations[0].t);
    }

    #[test]
    fn deterministic_history() {
        let f = |t: f64| Ok((t - 0.3).powi(2));
        let (_, a) = tpe_minimize(f, 60, &TpeConfig::default(), 9).unwrap();
        let (_, b) = tpe_minimize(f, 60, &TpeConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn failing_loss_keeps_partial_history() {
        let mut calls = 0;
        let err = tpe_minimize(
            |_| {
                calls += 1;
                if calls == 5 {
                    Err(Error::Data("boom".into()))
                } else {
                    Ok(1.0)
                }
            },
            10,
            &TpeConfig::default(),
            0,
        )
        .unwrap_err();
        assert_eq!(err.history.observations.len(), 4);
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TpeConfig {
            gamma: 1.0,
            ..TpeConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(tpe_minimize(|_| Ok(0.0), 0, &TpeConfig::default(), 0).is_err());
    }
}
