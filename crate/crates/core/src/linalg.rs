//! Small dense linear-algebra helpers shared by the estimators, designs and oracle.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative cutoff on singular values used when deciding whether a
/// regression design or contrast matrix has full rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Relative eigenvalue cutoff used before inverting a projected covariance.
pub const INVERSION_TOLERANCE: f64 = 1e-12;

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Solve `a x = b` for symmetric positive semidefinite `a`, returning `None`
/// when the eigenvalue ratio falls below `tolerance`.
pub fn solve_symmetric(a: &DMatrix<f64>, b: &DVector<f64>, tolerance: f64) -> Option<DVector<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if max == 0.0 || !max.is_finite() {
        return None;
    }
    if eig.eigenvalues.iter().any(|v| *v <= tolerance * max) {
        return None;
    }
    let projected = eig.eigenvectors.transpose() * b;
    let scaled = DVector::from_iterator(
        projected.len(),
        projected
            .iter()
            .zip(eig.eigenvalues.iter())
            .map(|(p, l)| p / l),
    );
    Some(&eig.eigenvectors * scaled)
}

/// Inverse of a symmetric positive definite matrix via its eigendecomposition.
/// Returns the offending smallest eigenvalue on failure.
pub fn inverse_symmetric(a: &DMatrix<f64>, tolerance: f64) -> Result<DMatrix<f64>, f64> {
    let eig = SymmetricEigen::new(a.clone());
    let min = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) || !(min > tolerance * max) {
        return Err(min);
    }
    let n = a.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for (k, lambda) in eig.eigenvalues.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        inv += (v * v.transpose()) / *lambda;
    }
    Ok(symmetrize(inv))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Maximum absolute elementwise difference.
pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    carry: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.carry += (self.sum - t) + value;
        } else {
            self.carry += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.carry
    }
}

/// Elementwise compensated accumulator for a fixed-length vector.
#[derive(Debug, Clone)]
pub struct CompensatedVec(Vec<CompensatedSum>);

impl CompensatedVec {
    pub fn zeros(len: usize) -> Self {
        CompensatedVec(vec![CompensatedSum::default(); len])
    }

    pub fn add_scaled(&mut self, values: &[f64], weight: f64) {
        for (acc, v) in self.0.iter_mut().zip(values) {
            acc.add(weight * v);
        }
    }

    pub fn values(&self) -> Vec<f64> {
        self.0.iter().map(CompensatedSum::value).collect()
    }
}
