use nalgebra::{DMatrix, DVector};

use super::chi2::chi2_quantile;
use super::CovarianceEstimate;
use crate::contrast::Contrast;
use crate::error::{Error, Result};
use crate::linalg::{inverse_symmetric, symmetrize, INVERSION_TOLERANCE};

/// Wald ellipsoid `{τ : (τ̂ − τ)ᵀ Σ⁻¹ (τ̂ − τ) ≤ χ²_{Q,1−α}}` with
/// `Σ = T⁻¹ C V Cᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceSet {
    center: Vec<f64>,
    covariance: DMatrix<f64>,
    shape: DMatrix<f64>,
    threshold: f64,
}

impl ConfidenceSet {
    pub fn center(&self) -> &[f64] {
        &self.center
    }

    /// `T⁻¹ C V Cᵀ`.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Inverse of [`Self::covariance`].
    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn quadratic_form(&self, tau: &[f64]) -> f64 {
        let d = DVector::from_iterator(
            self.center.len(),
            self.center.iter().zip(tau).map(|(c, t)| c - t),
        );
        (d.transpose() * &self.shape * &d)[(0, 0)]
    }

    pub fn contains(&self, tau: &[f64]) -> bool {
        tau.len() == self.center.len() && self.quadratic_form(tau) <= self.threshold
    }

    /// The interval for a single estimand, `None` when `Q > 1`.
    pub fn interval(&self) -> Option<(f64, f64)> {
        if self.center.len() != 1 {
            return None;
        }
        let half = (self.threshold * self.covariance[(0, 0)]).sqrt();
        Some((self.center[0] - half, self.center[0] + half))
    }

    /// Per-coordinate projections of the ellipsoid, `τ̂_q ± sqrt(χ² Σ_qq)`.
    /// For `Q = 1` these are the interval endpoints.
    pub fn shadow_intervals(&self) -> (Vec<f64>, Vec<f64>) {
        self.center
            .iter()
            .enumerate()
            .map(|(q, c)| {
                let half = (self.threshold * self.covariance[(q, q)]).sqrt();
                (c - half, c + half)
            })
            .unzip()
    }

    /// Mean shadow-interval length; the interval length when `Q = 1`.
    pub fn mean_length(&self) -> f64 {
        let (lo, hi) = self.shadow_intervals();
        lo.iter().zip(&hi).map(|(l, h)| h - l).sum::<f64>() / lo.len() as f64
    }
}

pub fn confidence_set(
    tau_hat: &[f64],
    covariance: &CovarianceEstimate,
    contrast: &Contrast,
    alpha: f64,
    num_steps: usize,
) -> Result<ConfidenceSet> {
    if tau_hat.len() != contrast.num_estimands() {
        return Err(Error::DimensionMismatch(format!(
            "estimate has {} entries, contrast has {} rows",
            tau_hat.len(),
            contrast.num_estimands()
        )));
    }
    if num_steps == 0 {
        return Err(Error::TooFewUnits { needed: 1, got: 0 });
    }
    check_loaded_arms(&covariance.matrix, contrast)?;
    wald_set(
        tau_hat,
        contrast.project(&covariance.matrix)? / num_steps as f64,
        alpha,
    )
}

/// An arm the contrast loads on whose pseudo-outcome never varies (for
/// instance one that is never assigned) leaves its mean unidentified from
/// the data, even when the projection `C V Cᵀ` happens to stay invertible.
fn check_loaded_arms(v: &DMatrix<f64>, contrast: &Contrast) -> Result<()> {
    let scale = v.diagonal().iter().copied().fold(0.0, f64::max);
    for z in 0..v.nrows() {
        let loaded = contrast.matrix().column(z).iter().any(|c| *c != 0.0);
        if loaded && !(v[(z, z)] > INVERSION_TOLERANCE * scale) {
            return Err(Error::SingularCovariance {
                eigenvalue: v[(z, z)],
            });
        }
    }
    Ok(())
}

/// Wald set from an estimate and its already projected `Q × Q` covariance.
pub fn wald_set(center: &[f64], covariance: DMatrix<f64>, alpha: f64) -> Result<ConfidenceSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha {alpha} is not in (0, 1)")));
    }
    if covariance.nrows() != center.len() || covariance.ncols() != center.len() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} covariance for a {}-vector",
            covariance.nrows(),
            covariance.ncols(),
            center.len()
        )));
    }
    let covariance = symmetrize(covariance);
    let shape = inverse_symmetric(&covariance, INVERSION_TOLERANCE)
        .map_err(|eigenvalue| Error::SingularCovariance { eigenvalue })?;
    Ok(ConfidenceSet {
        center: center.to_vec(),
        covariance,
        shape,
        threshold: chi2_quantile(center.len(), 1.0 - alpha)?,
    })
}
