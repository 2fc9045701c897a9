use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered stimulus levels from `lower` to `upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSchedule {
    pub lower: f64,
    pub upper: f64,
    pub levels: Vec<f64>,
}

impl LevelSchedule {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Schedule from explicit levels, e.g. the nominal levels of a
    /// pre-rendered frame sequence. Levels must strictly increase.
    pub fn from_levels(levels: Vec<f64>) -> Result<Self> {
        if levels.len() < 2 {
            return Err(Error::Config(format!(
                "a schedule needs at least 2 levels, got {}",
                levels.len()
            )));
        }
        if levels.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("schedule levels must be finite".into()));
        }
        if let Some(w) = levels.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "schedule levels must strictly increase (index {} -> {})",
                w,
                w + 1
            )));
        }
        Ok(Self {
            lower: levels[0],
            upper: levels[levels.len() - 1],
            levels,
        })
    }
}

/// `n` levels `lower + (upper - lower)·(10^(j/(n-1)) - 1)/9`, dense near
/// `lower` and sparse near `upper`. The end points are exact.
pub fn log_space(lower: f64, upper: f64, n: usize) -> Result<LevelSchedule> {
    if n < 2 {
        return Err(Error::Config(format!("log_space needs n >= 2, got {n}")));
    }
    if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
        return Err(Error::Config(format!(
            "log_space needs finite bounds with lower < upper, got ({lower}, {upper})"
        )));
    }
    let span = upper - lower;
    let mut levels: Vec<f64> = (0..n)
        .map(|j| {
            let u = (10f64.powf(j as f64 / (n - 1) as f64) - 1.0) / 9.0;
            lower + span * u
        })
        .collect();
    levels[0] = lower;
    levels[n - 1] = upper;
    Ok(LevelSchedule { lower, upper, levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_levels_are_the_bounds() {
        assert_eq!(log_space(0.0, 5.0, 2).unwrap().levels, vec![0.0, 5.0]);
    }

    #[test]
    fn three_levels() {
        let s = log_space(0.0, 9.0, 3).unwrap();
        assert_eq!(s.levels[0], 0.0);
        assert!((s.levels[1] - 2.16228).abs() < 1e-4);
        assert_eq!(s.levels[2], 9.0);
    }

    #[test]
    fn bad_arguments() {
        assert!(log_space(0.0, 1.0, 1).is_err());
        assert!(log_space(1.0, 1.0, 5).is_err());
        assert!(log_space(2.0, 1.0, 5).is_err());
        assert!(LevelSchedule::from_levels(vec![0.0, 0.5, 0.5]).is_err());
    }

    proptest! {
        #[test]
        fn gaps_strictly_increase(lower in -10.0..10.0f64, span in 0.1..100.0f64, n in 3usize..300) {
            let s = log_space(lower, lower + span, n).unwrap();
            prop_assert_eq!(s.levels.len(), n);
            prop_assert_eq!(s.levels[0], lower);
            prop_assert_eq!(s.levels[n - 1], lower + span);
            let gaps: Vec<f64> = s.levels.windows(2).map(|w| w[1] - w[0]).collect();
            prop_assert!(gaps.iter().all(|&g| g > 0.0));
            prop_assert!(gaps.windows(2).all(|g| g[1] > g[0]));
        }
    }
}
