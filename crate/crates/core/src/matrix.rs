use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense probe x gallery similarity matrix with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite() || !(0.0..=1.0).contains(v)) {
            return Err(Error::Input(format!(
                "similarity {} at ({}, {}) is not a finite value in [0, 1]",
                values[bad],
                bad / cols.max(1),
                bad % cols.max(1)
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::Dimension(format!(
                "row {i} has {} columns, expected {m}",
                rows[i].len()
            )));
        }
        Self::new(n, m, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Square sub-matrix on the given indices (rows and columns alike).
    pub fn restrict(&self, indices: &[usize]) -> SimilarityMatrix {
        let mut values = Vec::with_capacity(indices.len() * indices.len());
        for &i in indices {
            for &j in indices {
                values.push(self.get(i, j));
            }
        }
        SimilarityMatrix {
            rows: indices.len(),
            cols: indices.len(),
            values,
        }
    }

    pub(crate) fn require_square(&self) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "expected a square matrix, got {}x{}",
                self.rows, self.cols
            )))
        }
    }
}

/// `(S + Sᵀ) / 2`. The result is symmetric bit for bit because each pair is
/// computed once and written to both cells.
pub fn symmetrize(s: &SimilarityMatrix) -> Result<SimilarityMatrix> {
    s.require_square()?;
    let n = s.rows;
    let mut values = s.values.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let mean = (s.get(i, j) + s.get(j, i)) / 2.0;
            values[i * n + j] = mean;
            values[j * n + i] = mean;
        }
    }
    Ok(SimilarityMatrix {
        rows: n,
        cols: n,
        values,
    })
}

/// Decision threshold in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(t: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&t) {
            Ok(Self(t))
        } else {
            Err(Error::Config(format!("threshold {t} is outside [0, 1]")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Threshold {
    type Error = Error;

    fn try_from(t: f64) -> Result<Self> {
        Threshold::new(t)
    }
}

impl From<Threshold> for f64 {
    fn from(t: Threshold) -> f64 {
        t.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetrize_two_by_two() {
        let s = SimilarityMatrix::from_rows(vec![vec![1.0, 0.4], vec![0.6, 1.0]]).unwrap();
        let sym = symmetrize(&s).unwrap();
        assert_eq!(sym.values(), &[1.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn symmetric_input_is_a_fixed_point() {
        let s =
            SimilarityMatrix::from_rows(vec![vec![1.0, 0.3, 0.2], vec![0.3, 0.9, 0.7], vec![0.2, 0.7, 1.0]]).unwrap();
        assert_eq!(symmetrize(&s).unwrap(), s);
    }

    #[test]
    fn symmetrize_rejects_rectangular() {
        let s = SimilarityMatrix::new(2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(symmetrize(&s), Err(Error::Dimension(_))));
    }

    #[test]
    fn constructor_rejects_nan_and_out_of_range() {
        assert!(SimilarityMatrix::new(1, 2, vec![0.5, f64::NAN]).is_err());
        assert!(SimilarityMatrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(SimilarityMatrix::new(1, 1, vec![-0.1]).is_err());
    }

    #[test]
    fn threshold_domain() {
        assert!(Threshold::new(0.0).is_ok());
        assert!(Threshold::new(1.0).is_ok());
        assert!(Threshold::new(1.01).is_err());
        assert!(serde_json::from_str::<Threshold>("2.0").is_err());
    }

    fn square(max: usize) -> impl Strategy<Value = SimilarityMatrix> {
        (1..max).prop_flat_map(|n| {
            prop::collection::vec(0.0..=1.0f64, n * n).prop_map(move |v| SimilarityMatrix::new(n, n, v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn symmetrize_is_idempotent_and_keeps_diagonal(s in square(8)) {
            let once = symmetrize(&s).unwrap();
            let twice = symmetrize(&once).unwrap();
            prop_assert_eq!(&once, &twice);
            for i in 0..s.rows() {
                prop_assert_eq!(once.get(i, i).to_bits(), s.get(i, i).to_bits());
                for j in 0..s.cols() {
                    prop_assert_eq!(once.get(i, j).to_bits(), once.get(j, i).to_bits());
                }
            }
        }
    }
}
