//! IPW and AIPW estimation from an experiment log.
//!
//! Every estimator works on a [`PseudoOutcomeTrace`]: one K-vector per
//! assignment step (a unit, or a block averaged over its units) together
//! with the step's share of the population. Unit logs are the special case
//! of blocks of size one, so both share a single covariance code path.

pub mod chi2;
mod confidence;
mod diagnostics;

pub use confidence::{confidence_set, wald_set, ConfidenceSet};
pub use diagnostics::{diagnostics, DiagnosticThresholds, DiagnosticsSummary};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contrast::Contrast;
use crate::error::{Error, Result};
use crate::population::{ExperimentLog, FinitePopulation};

/// Per-step pseudo-outcomes `Ŷ_t,ipw`, `Ŷ_t,aipw`, `Ỹ_t,aipw` and `m̂_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoOutcomeTrace {
    num_arms: usize,
    ipw: Vec<Vec<f64>>,
    aipw: Vec<Vec<f64>>,
    residualized: Vec<Vec<f64>>,
    predictions: Vec<Vec<f64>>,
    group_sizes: Vec<usize>,
    total_units: usize,
}

impl PseudoOutcomeTrace {
    pub fn num_steps(&self) -> usize {
        self.group_sizes.len()
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn ipw(&self) -> &[Vec<f64>] {
        &self.ipw
    }

    pub fn aipw(&self) -> &[Vec<f64>] {
        &self.aipw
    }

    /// `Ỹ_t = Ŷ_t,aipw − m̂_t`.
    pub fn residualized(&self) -> &[Vec<f64>] {
        &self.residualized
    }

    pub fn predictions(&self) -> &[Vec<f64>] {
        &self.predictions
    }

    pub fn group_sizes(&self) -> &[usize] {
        &self.group_sizes
    }

    /// `π_t = n_t / N`.
    pub fn pi(&self, t: usize) -> f64 {
        self.group_sizes[t] as f64 / self.total_units as f64
    }

    /// `ρ_t = T π_t`, formed from integers so equal blocks give exactly 1.
    pub fn rho(&self, t: usize) -> f64 {
        (self.num_steps() * self.group_sizes[t]) as f64 / self.total_units as f64
    }

    fn rows(&self, which: Pseudo) -> &[Vec<f64>] {
        match which {
            Pseudo::Ipw => &self.ipw,
            Pseudo::Aipw => &self.aipw,
            Pseudo::Residualized => &self.residualized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pseudo {
    Ipw,
    Aipw,
    Residualized,
}

/// Build the pseudo-outcome trace of a log, using the stored probabilities.
pub fn pseudo_outcomes(log: &ExperimentLog) -> Result<PseudoOutcomeTrace> {
    let k = log.num_arms();
    let records = log.records();
    let groups: Vec<std::ops::Range<usize>> = match log.blocks() {
        Some(b) => b.ranges().collect(),
        None => (0..records.len()).map(|t| t..t + 1).collect(),
    };
    let mut trace = PseudoOutcomeTrace {
        num_arms: k,
        ipw: Vec::with_capacity(groups.len()),
        aipw: Vec::with_capacity(groups.len()),
        residualized: Vec::with_capacity(groups.len()),
        predictions: Vec::with_capacity(groups.len()),
        group_sizes: Vec::with_capacity(groups.len()),
        total_units: records.len(),
    };
    for range in groups {
        let n = range.len();
        let mut ipw = vec![0.0; k];
        let mut aipw = vec![0.0; k];
        let mut tilde = vec![0.0; k];
        let mut pred = vec![0.0; k];
        for (offset, r) in records[range.clone()].iter().enumerate() {
            for z in 0..k {
                let e = r.probs[z];
                if !(e > 0.0) {
                    return Err(Error::InvalidProbability {
                        unit: range.start + offset + 1,
                        arm: z + 1,
                        value: e,
                    });
                }
                let w = if r.arm == z { 1.0 / e } else { 0.0 };
                let m = r.predictions[z];
                // Ŷ_aipw = Ŷ_ipw + (1 − w) m̂, kept in residual form so that a
                // perfect model gives exactly m̂ and a zero model exactly Ŷ_ipw.
                let resid = w * (r.outcome - m);
                ipw[z] += w * r.outcome;
                aipw[z] += m + resid;
                tilde[z] += resid;
                pred[z] += m;
            }
        }
        if n > 1 {
            let nf = n as f64;
            for v in [&mut ipw, &mut aipw, &mut tilde, &mut pred] {
                v.iter_mut().for_each(|x| *x /= nf);
            }
        }
        trace.ipw.push(ipw);
        trace.aipw.push(aipw);
        trace.residualized.push(tilde);
        trace.predictions.push(pred);
        trace.group_sizes.push(n);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    Ipw,
    Aipw,
}

/// `Σ_t w_t v_t`.
fn weighted_sum(rows: &[Vec<f64>], weights: &[f64], k: usize) -> Vec<f64> {
    let mut acc = vec![0.0; k];
    for (v, w) in rows.iter().zip(weights) {
        for (a, x) in acc.iter_mut().zip(v) {
            *a += w * x;
        }
    }
    acc
}

/// `Σ_t w_t (v_t − c)(v_t − c)ᵀ` with `c = Σ_t u_t v_t`.
fn dispersion(
    rows: &[Vec<f64>],
    center_weights: &[f64],
    weights: &[f64],
    k: usize,
) -> DMatrix<f64> {
    let c = weighted_sum(rows, center_weights, k);
    let mut m = DMatrix::zeros(k, k);
    let mut d = vec![0.0; k];
    for (v, w) in rows.iter().zip(weights) {
        for z in 0..k {
            d[z] = v[z] - c[z];
        }
        for a in 0..k {
            for b in 0..=a {
                m[(a, b)] += w * (d[a] * d[b]);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
    m
}

fn scaled_rows(trace: &PseudoOutcomeTrace, which: Pseudo) -> Vec<Vec<f64>> {
    trace
        .rows(which)
        .iter()
        .enumerate()
        .map(|(t, v)| {
            let rho = trace.rho(t);
            v.iter().map(|x| rho * x).collect()
        })
        .collect()
}

fn uniform_weights(trace: &PseudoOutcomeTrace) -> Vec<f64> {
    vec![1.0 / trace.num_steps() as f64; trace.num_steps()]
}

/// `T⁻¹ Σ_t ρ_t Ŷ_t`, the estimate of `Ȳ`.
pub fn arm_means(trace: &PseudoOutcomeTrace, estimator: Estimator) -> Vec<f64> {
    let which = match estimator {
        Estimator::Ipw => Pseudo::Ipw,
        Estimator::Aipw => Pseudo::Aipw,
    };
    weighted_sum(
        &scaled_rows(trace, which),
        &uniform_weights(trace),
        trace.num_arms,
    )
}

/// `τ̂ = C T⁻¹ Σ_t ρ_t Ŷ_t`.
pub fn point_estimate(
    trace: &PseudoOutcomeTrace,
    estimator: Estimator,
    contrast: &Contrast,
) -> Result<Vec<f64>> {
    contrast.apply(&arm_means(trace, estimator))
}

/// Weights making the block covariance estimator unbiased under constant
/// group-average effects. Requires every `π_t < 1/2`.
pub fn bt_weights(block_sizes: &[usize]) -> Result<Vec<f64>> {
    let total: usize = block_sizes.iter().sum();
    if block_sizes.is_empty() || block_sizes.contains(&0) {
        return Err(Error::InvalidPopulation(
            "block sizes must be positive".into(),
        ));
    }
    if let Some(g) = block_sizes.iter().position(|&n| 2 * n >= total) {
        return Err(Error::GroupProportion {
            group: g + 1,
            proportion: block_sizes[g] as f64 / total as f64,
        });
    }
    let t = block_sizes.len();
    if block_sizes.windows(2).all(|w| w[0] == w[1]) {
        return Ok(vec![1.0 / (t - 1) as f64; t]);
    }
    let ratio: Vec<f64> = block_sizes
        .iter()
        .map(|&n| {
            let pi = n as f64 / total as f64;
            pi * pi / (1.0 - 2.0 * pi)
        })
        .collect();
    let denom = 1.0 + ratio.iter().sum::<f64>();
    Ok(ratio.iter().map(|r| t as f64 * r / denom).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceKind {
    /// Sample covariance of `ρ_t Ŷ_t,ipw`.
    VhatIpw,
    /// Sample covariance of `ρ_t Ŷ_t,aipw`.
    VhatAipw,
    /// Sample covariance of the residualized `ρ_t Ỹ_t`.
    VtildeAipw,
    /// `b_t`-weighted dispersion of `Ŷ_t,aipw` around `Σ π_t Ŷ_t,aipw`.
    VhatAipwB,
    /// `b_t`-weighted dispersion of `Ỹ_t`.
    VtildeAipwB,
}

impl CovarianceKind {
    pub const ALL: [CovarianceKind; 5] = [
        CovarianceKind::VhatIpw,
        CovarianceKind::VhatAipw,
        CovarianceKind::VtildeAipw,
        CovarianceKind::VhatAipwB,
        CovarianceKind::VtildeAipwB,
    ];

    /// The point estimator this covariance accompanies.
    pub fn estimator(self) -> Estimator {
        match self {
            CovarianceKind::VhatIpw => Estimator::Ipw,
            _ => Estimator::Aipw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub kind: CovarianceKind,
    /// `K × K`, an estimate of `T Cov(Ŷ)`.
    pub matrix: DMatrix<f64>,
}

pub fn covariance_estimate(
    trace: &PseudoOutcomeTrace,
    kind: CovarianceKind,
) -> Result<CovarianceEstimate> {
    let t = trace.num_steps();
    if t < 2 {
        return Err(Error::TooFewUnits { needed: 2, got: t });
    }
    let k = trace.num_arms;
    let matrix = match kind {
        CovarianceKind::VhatIpw | CovarianceKind::VhatAipw | CovarianceKind::VtildeAipw => {
            let which = match kind {
                CovarianceKind::VhatIpw => Pseudo::Ipw,
                CovarianceKind::VhatAipw => Pseudo::Aipw,
                _ => Pseudo::Residualized,
            };
            dispersion(
                &scaled_rows(trace, which),
                &uniform_weights(trace),
                &vec![1.0 / (t - 1) as f64; t],
                k,
            )
        }
        CovarianceKind::VhatAipwB | CovarianceKind::VtildeAipwB => {
            let b = bt_weights(&trace.group_sizes)?;
            let pi: Vec<f64> = (0..t).map(|s| trace.pi(s)).collect();
            let which = if kind == CovarianceKind::VhatAipwB {
                Pseudo::Aipw
            } else {
                Pseudo::Residualized
            };
            // for equal blocks ρ_t = 1, π_t = 1/T and b_t = 1/(T−1) exactly,
            // so this reproduces the unweighted path bit for bit
            dispersion(trace.rows(which), &pi, &b, k)
        }
    };
    Ok(CovarianceEstimate { kind, matrix })
}

/// Everything derived from one log: the JSON-facing report plus the
/// intermediate objects.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: InferenceReport,
    pub trace: PseudoOutcomeTrace,
    pub covariance: CovarianceEstimate,
    pub confidence_set: ConfidenceSet,
}

/// Serialized summary of one analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub tau_hat: Vec<f64>,
    /// Estimated covariance of `tau_hat`, `T⁻¹ C V Cᵀ`.
    pub cov: Vec<Vec<f64>>,
    pub ci_lower: Vec<f64>,
    pub ci_upper: Vec<f64>,
    pub chi2_threshold: f64,
    pub diagnostics: DiagnosticsSummary,
}

pub fn analyze(
    log: &ExperimentLog,
    contrast: &Contrast,
    kind: CovarianceKind,
    alpha: f64,
    population: Option<&FinitePopulation>,
) -> Result<Analysis> {
    contrast.check_arms(log.num_arms())?;
    let trace = pseudo_outcomes(log)?;
    let tau_hat = point_estimate(&trace, kind.estimator(), contrast)?;
    let covariance = covariance_estimate(&trace, kind)?;
    let set = confidence_set(&tau_hat, &covariance, contrast, alpha, trace.num_steps())?;
    let (ci_lower, ci_upper) = set.shadow_intervals();
    let report = InferenceReport {
        tau_hat,
        cov: matrix_rows(set.covariance()),
        ci_lower,
        ci_upper,
        chi2_threshold: set.threshold(),
        diagnostics: diagnostics(log, population, &DiagnosticThresholds::default()),
    };
    Ok(Analysis {
        report,
        trace,
        covariance,
        confidence_set: set,
    })
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::{BlockStructure, UnitRecord};

    fn one_unit(m: [f64; 2]) -> ExperimentLog {
        let mut r = UnitRecord::new(vec![], 0, vec![0.5, 0.5], 2.0);
        r.predictions = m.to_vec();
        ExperimentLog::new(2, vec![r], None).unwrap()
    }

    #[test]
    fn single_unit_pseudo_outcomes() {
        let t = pseudo_outcomes(&one_unit([0.0, 0.0])).unwrap();
        assert_eq!(t.ipw()[0], vec![4.0, 0.0]);
        assert_eq!(
            point_estimate(&t, Estimator::Ipw, &Contrast::difference()).unwrap(),
            vec![-4.0]
        );
        let t = pseudo_outcomes(&one_unit([1.0, 3.0])).unwrap();
        assert_eq!(t.aipw()[0], vec![3.0, 3.0]);
        assert_eq!(t.residualized()[0], vec![2.0, 0.0]);
        assert!(covariance_estimate(&t, CovarianceKind::VhatIpw).is_err());
    }

    #[test]
    fn bt_weight_cases() {
        assert_eq!(bt_weights(&[2, 2, 2, 2]).unwrap(), vec![1.0 / 3.0; 4]);
        assert!(matches!(
            bt_weights(&[3, 5]),
            Err(Error::GroupProportion { group: 2, .. })
        ));
        let err = bt_weights(&[3, 5]).unwrap_err().to_string();
        assert!(err.contains("group proportion must be below one half"));
        let b = bt_weights(&[3, 4, 5]).unwrap();
        assert!(b.iter().all(|v| *v > 0.0));
    }

    fn blocked_log(sizes: &[usize]) -> ExperimentLog {
        let n: usize = sizes.iter().sum();
        let records = (0..n)
            .map(|u| {
                let e1 = 0.3 + 0.05 * (u % 4) as f64;
                let mut r = UnitRecord::new(
                    vec![],
                    u % 2,
                    vec![1.0 - e1, e1],
                    (u * u) as f64 * 0.1 - 1.0,
                );
                r.predictions = vec![0.2 * u as f64, -0.1 * u as f64];
                r
            })
            .collect();
        ExperimentLog::new(
            2,
            records,
            Some(BlockStructure::new(sizes.to_vec()).unwrap()),
        )
        .unwrap()
    }

    #[test]
    fn equal_blocks_share_the_unweighted_path() {
        let trace = pseudo_outcomes(&blocked_log(&[3, 3, 3, 3])).unwrap();
        for t in 0..4 {
            assert_eq!(trace.rho(t), 1.0);
        }
        let a = covariance_estimate(&trace, CovarianceKind::VhatAipw).unwrap();
        let b = covariance_estimate(&trace, CovarianceKind::VhatAipwB).unwrap();
        assert_eq!(a.matrix, b.matrix);
        let a = covariance_estimate(&trace, CovarianceKind::VtildeAipw).unwrap();
        let b = covariance_estimate(&trace, CovarianceKind::VtildeAipwB).unwrap();
        assert_eq!(a.matrix, b.matrix);
    }

    #[test]
    fn identical_vectors_have_zero_dispersion() {
        let records = (0..5)
            .map(|_| UnitRecord::new(vec![], 0, vec![0.5, 0.5], 1.0))
            .collect();
        let log = ExperimentLog::new(2, records, None).unwrap();
        let trace = pseudo_outcomes(&log).unwrap();
        for kind in CovarianceKind::ALL {
            let c = covariance_estimate(&trace, kind).unwrap();
            assert!(c.matrix.iter().all(|v| *v == 0.0), "{kind:?}");
        }
    }
}
