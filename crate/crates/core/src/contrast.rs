use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::RANK_TOLERANCE;

/// A full-row-rank `Q × K` coefficient matrix defining `τ_C = C Ȳ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Contrast {
    matrix: DMatrix<f64>,
}

impl Contrast {
    /// Rejects matrices whose smallest singular value is at most
    /// `1e-10` times the largest, or with more rows than columns.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let (q, k) = matrix.shape();
        if q == 0 || k == 0 {
            return Err(Error::DimensionMismatch(
                "contrast matrix must be non-empty".into(),
            ));
        }
        if q > k {
            return Err(Error::RankDeficient { ratio: 0.0 });
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch(
                "contrast matrix has non-finite entries".into(),
            ));
        }
        let sv = matrix.clone().svd(false, false).singular_values;
        let max = sv.iter().copied().fold(0.0, f64::max);
        let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min <= RANK_TOLERANCE * max {
            let ratio = if max > 0.0 { min / max } else { 0.0 };
            return Err(Error::RankDeficient { ratio });
        }
        Ok(Contrast { matrix })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let q = rows.len();
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::DimensionMismatch("ragged contrast rows".into()));
        }
        Self::new(DMatrix::from_fn(q, k, |i, j| rows[i][j]))
    }

    /// The treatment-control contrast `(-1, 1)`.
    pub fn difference() -> Self {
        Contrast {
            matrix: DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]),
        }
    }

    pub fn identity(num_arms: usize) -> Self {
        Contrast {
            matrix: DMatrix::identity(num_arms, num_arms),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn num_estimands(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn num_arms(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_arms(v.len())?;
        let out = &self.matrix * DVector::from_column_slice(v);
        Ok(out.iter().copied().collect())
    }

    /// `C M Cᵀ` for a `K × K` matrix `M`.
    pub fn project(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_arms(m.nrows())?;
        self.check_arms(m.ncols())?;
        Ok(&self.matrix * m * self.matrix.transpose())
    }

    /// Left-multiply by `A`: the contrast `A·C`, which must stay full rank.
    pub fn premultiply(&self, a: &DMatrix<f64>) -> Result<Self> {
        if a.ncols() != self.num_estimands() {
            return Err(Error::DimensionMismatch(format!(
                "cannot premultiply {}x{} contrast by {}x{} matrix",
                self.matrix.nrows(),
                self.matrix.ncols(),
                a.nrows(),
                a.ncols()
            )));
        }
        Self::new(a * &self.matrix)
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.matrix.nrows())
            .map(|i| self.matrix.row(i).iter().copied().collect())
            .collect()
    }

    pub(crate) fn check_arms(&self, k: usize) -> Result<()> {
        if k != self.num_arms() {
            return Err(Error::DimensionMismatch(format!(
                "contrast has {} columns but there are {} arms",
                self.num_arms(),
                k
            )));
        }
        Ok(())
    }
}

impl Serialize for Contrast {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Contrast {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Contrast::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_rank_deficient() {
        let err = Contrast::from_rows(&[vec![1.0, -1.0], vec![-2.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
        assert!(Contrast::from_rows(&[vec![0.0, 0.0]]).is_err());
        assert!(Contrast::from_rows(&[vec![1.0], vec![2.0]]).is_err());
    }

    #[test]
    fn difference_applies() {
        let c = Contrast::difference();
        assert_eq!(c.apply(&[1.0, 3.0]).unwrap(), vec![2.0]);
        assert!(c.apply(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn json_round_trip() {
        let c: Contrast = serde_json::from_str("[[-1, 1]]").unwrap();
        assert_eq!(c, Contrast::difference());
        assert_eq!(serde_json::to_string(&c).unwrap(), "[[-1.0,1.0]]");
        assert!(serde_json::from_str::<Contrast>("[[1, 1], [2, 2]]").is_err());
    }
}
