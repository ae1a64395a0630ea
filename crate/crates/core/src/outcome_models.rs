//! Outcome models `m̂_t(z)`.
//!
//! Adaptive models are incremental states that only ever see records of
//! earlier units. The same states, trained on all units or on the other
//! folds, back the all-units and cross-fitting comparators.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::contrast::Contrast;
use crate::error::{Error, Result};
use crate::history::HistoryView;
use crate::linalg::{solve_symmetric, RANK_TOLERANCE};
use crate::population::{ExperimentLog, FinitePopulation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeModelSpec {
    /// `m̂ ≡ 0`; AIPW then reduces to IPW.
    Zero,
    /// Arm sample mean of earlier outcomes, 0 before the arm is observed.
    RunningMean,
    /// Per-arm regression of `Y` on `(1, X)`; falls back to the running mean
    /// until `min_obs` (default `J + 2`) observations make it well posed.
    OnlineLeastSquares {
        #[serde(default)]
        min_obs: Option<usize>,
    },
    /// Mean outcome of the `k` nearest earlier same-arm units.
    KNearestNeighbors { k: usize },
    /// Predictions forced to the true potential outcomes. Not a function of
    /// the history; used to check the zero-residual limit.
    Oracle,
    /// Least squares fitted on every unit of the finished experiment.
    AllUnitsLeastSquares,
    /// Out-of-fold predictions from `inner` over contiguous folds.
    CrossFit {
        folds: usize,
        inner: Box<OutcomeModelSpec>,
    },
}

impl OutcomeModelSpec {
    pub fn is_adaptive(&self) -> bool {
        matches!(
            self,
            OutcomeModelSpec::Zero
                | OutcomeModelSpec::RunningMean
                | OutcomeModelSpec::OnlineLeastSquares { .. }
                | OutcomeModelSpec::KNearestNeighbors { .. }
        )
    }

    pub fn validate(&self, num_covariates: usize) -> Result<()> {
        match self {
            OutcomeModelSpec::OnlineLeastSquares { min_obs: Some(m) }
                if *m < num_covariates + 2 =>
            {
                Err(Error::InvalidModel(format!(
                    "min_obs = {m} is below J + 2 = {}",
                    num_covariates + 2
                )))
            }
            OutcomeModelSpec::KNearestNeighbors { k: 0 } => {
                Err(Error::InvalidModel("k must be at least 1".into()))
            }
            OutcomeModelSpec::CrossFit { folds, inner } => {
                if *folds < 2 {
                    return Err(Error::InvalidModel(format!(
                        "cross-fitting needs at least 2 folds, got {folds}"
                    )));
                }
                if !inner.is_adaptive() {
                    return Err(Error::InvalidModel(
                        "cross-fitting inner model must be a trainable model".into(),
                    ));
                }
                inner.validate(num_covariates)
            }
            _ => Ok(()),
        }
    }
}

/// An incremental per-arm outcome model.
pub trait OutcomeModel {
    fn observe(&mut self, x: &[f64], arm: usize, y: f64);
    /// `m̂(·)` at covariates `x`.
    fn predict(&self, x: &[f64]) -> Vec<f64>;
}

/// Fresh state for an adaptive model spec.
pub fn new_model(
    spec: &OutcomeModelSpec,
    num_arms: usize,
    num_covariates: usize,
) -> Result<Box<dyn OutcomeModel + Send>> {
    spec.validate(num_covariates)?;
    Ok(match spec {
        OutcomeModelSpec::Zero => Box::new(ZeroModel(num_arms)),
        OutcomeModelSpec::RunningMean => Box::new(RunningMean::new(num_arms)),
        OutcomeModelSpec::OnlineLeastSquares { min_obs } => Box::new(LeastSquares::new(
            num_arms,
            num_covariates,
            min_obs.unwrap_or(num_covariates + 2),
        )),
        OutcomeModelSpec::KNearestNeighbors { k } => {
            Box::new(NearestNeighbors::new(num_arms, num_covariates, *k))
        }
        other => {
            return Err(Error::InvalidModel(format!(
                "{other:?} is not an incremental model"
            )))
        }
    })
}

struct ZeroModel(usize);

impl OutcomeModel for ZeroModel {
    fn observe(&mut self, _: &[f64], _: usize, _: f64) {}
    fn predict(&self, _: &[f64]) -> Vec<f64> {
        vec![0.0; self.0]
    }
}

#[derive(Clone)]
struct RunningMean {
    counts: Vec<usize>,
    sums: Vec<f64>,
}

impl RunningMean {
    fn new(k: usize) -> Self {
        RunningMean {
            counts: vec![0; k],
            sums: vec![0.0; k],
        }
    }

    fn mean(&self, z: usize) -> f64 {
        if self.counts[z] == 0 {
            0.0
        } else {
            self.sums[z] / self.counts[z] as f64
        }
    }
}

impl OutcomeModel for RunningMean {
    fn observe(&mut self, _: &[f64], arm: usize, y: f64) {
        self.counts[arm] += 1;
        self.sums[arm] += y;
    }

    fn predict(&self, _: &[f64]) -> Vec<f64> {
        (0..self.counts.len()).map(|z| self.mean(z)).collect()
    }
}

struct LeastSquares {
    min_obs: usize,
    xtx: Vec<DMatrix<f64>>,
    xty: Vec<DVector<f64>>,
    coef: Vec<Option<DVector<f64>>>,
    fallback: RunningMean,
}

impl LeastSquares {
    fn new(k: usize, j: usize, min_obs: usize) -> Self {
        LeastSquares {
            min_obs,
            xtx: vec![DMatrix::zeros(j + 1, j + 1); k],
            xty: vec![DVector::zeros(j + 1); k],
            coef: vec![None; k],
            fallback: RunningMean::new(k),
        }
    }
}

impl OutcomeModel for LeastSquares {
    fn observe(&mut self, x: &[f64], arm: usize, y: f64) {
        let p = x.len() + 1;
        let row = |i: usize| if i == 0 { 1.0 } else { x[i - 1] };
        let xtx = &mut self.xtx[arm];
        for a in 0..p {
            let ra = row(a);
            self.xty[arm][a] += ra * y;
            for b in 0..p {
                xtx[(a, b)] += ra * row(b);
            }
        }
        self.fallback.observe(x, arm, y);
        self.coef[arm] = if self.fallback.counts[arm] >= self.min_obs {
            solve_symmetric(xtx, &self.xty[arm], RANK_TOLERANCE)
        } else {
            None
        };
    }

    fn predict(&self, x: &[f64]) -> Vec<f64> {
        (0..self.coef.len())
            .map(|z| match &self.coef[z] {
                Some(beta) => {
                    beta[0]
                        + x.iter()
                            .zip(beta.iter().skip(1))
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                }
                None => self.fallback.mean(z),
            })
            .collect()
    }
}

/// Per-arm store of past points. One-dimensional covariates are kept sorted
/// so a query walks outward from its insertion point.
struct NearestNeighbors {
    k: usize,
    dim: usize,
    arms: Vec<ArmPoints>,
}

#[derive(Default)]
struct ArmPoints {
    // (x, insertion index, y), sorted by (x, index) when dim == 1
    sorted: Vec<(f64, usize, f64)>,
    points: Vec<(Vec<f64>, f64)>,
}

impl NearestNeighbors {
    fn new(num_arms: usize, dim: usize, k: usize) -> Self {
        NearestNeighbors {
            k,
            dim,
            arms: (0..num_arms).map(|_| ArmPoints::default()).collect(),
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn mean_of_first(mut found: Vec<(f64, usize, f64)>, k: usize) -> f64 {
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let take = k.min(found.len());
    found[..take].iter().map(|f| f.2).sum::<f64>() / take as f64
}

impl ArmPoints {
    fn len(&self) -> usize {
        self.points.len().max(self.sorted.len())
    }

    fn query_sorted(&self, q: f64, k: usize) -> f64 {
        let s = &self.sorted;
        let dist = |i: usize| ((s[i].0 - q) * (s[i].0 - q)).sqrt();
        let pos = s.partition_point(|p| p.0 < q);
        let (mut left, mut right) = (pos, pos);
        let mut found: Vec<(f64, usize, f64)> = Vec::with_capacity(k + 2);
        let mut kth = f64::INFINITY;
        loop {
            let dl = if left > 0 {
                dist(left - 1)
            } else {
                f64::INFINITY
            };
            let dr = if right < s.len() {
                dist(right)
            } else {
                f64::INFINITY
            };
            let d = dl.min(dr);
            if d == f64::INFINITY || (found.len() >= k && d > kth) {
                break;
            }
            if dl <= dr {
                left -= 1;
                found.push((dl, s[left].1, s[left].2));
            } else {
                found.push((dr, s[right].1, s[right].2));
                right += 1;
            }
            if found.len() == k {
                kth = d;
            }
        }
        mean_of_first(found, k)
    }

    fn query_brute(&self, q: &[f64], k: usize) -> f64 {
        let found = self
            .points
            .iter()
            .enumerate()
            .map(|(i, (x, y))| (euclidean(x, q), i, *y))
            .collect();
        mean_of_first(found, k)
    }
}

impl OutcomeModel for NearestNeighbors {
    fn observe(&mut self, x: &[f64], arm: usize, y: f64) {
        let store = &mut self.arms[arm];
        if self.dim == 1 {
            let idx = store.sorted.len();
            let pos = store.sorted.partition_point(|p| p.0 <= x[0]);
            store.sorted.insert(pos, (x[0], idx, y));
        } else {
            store.points.push((x.to_vec(), y));
        }
    }

    fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.arms
            .iter()
            .map(|a| {
                if a.len() == 0 {
                    0.0
                } else if self.dim == 1 {
                    a.query_sorted(x[0], self.k)
                } else {
                    a.query_brute(x, self.k)
                }
            })
            .collect()
    }
}

/// `m̂_t(·)` from the history alone, replaying every earlier record.
pub fn predict_adaptive(
    spec: &OutcomeModelSpec,
    history: &HistoryView<'_>,
    x: &[f64],
) -> Result<Vec<f64>> {
    if !spec.is_adaptive() {
        return Err(Error::InvalidModel(format!(
            "{spec:?} cannot predict from a history"
        )));
    }
    let mut model = new_model(spec, history.num_arms, x.len())?;
    for r in history.past {
        model.observe(&r.covariates, r.arm, r.outcome);
    }
    Ok(model.predict(x))
}

/// Fill in the log's predictions with `spec`.
///
/// Adaptive models predict each unit (each block, for block logs) from the
/// records before it. `population` is needed only for the oracle model.
pub fn attach_predictions(
    log: &ExperimentLog,
    spec: &OutcomeModelSpec,
    population: Option<&FinitePopulation>,
) -> Result<ExperimentLog> {
    let predictions = match spec {
        OutcomeModelSpec::Oracle => {
            let pop = population.ok_or_else(|| {
                Error::InvalidModel("the oracle model needs the potential-outcome table".into())
            })?;
            if pop.num_units() != log.num_units() || pop.num_arms() != log.num_arms() {
                return Err(Error::DimensionMismatch(
                    "population does not match the log".into(),
                ));
            }
            (0..pop.num_units())
                .map(|t| pop.outcomes(t).to_vec())
                .collect()
        }
        OutcomeModelSpec::AllUnitsLeastSquares => {
            predict_all_units(log, &OutcomeModelSpec::OnlineLeastSquares { min_obs: None })?
                .predictions
        }
        OutcomeModelSpec::CrossFit { folds, inner } => {
            spec.validate(log.num_covariates())?;
            let mut out = Vec::with_capacity(log.num_units());
            for range in fold_ranges(log.num_units(), *folds)? {
                out.extend(out_of_fold(log, inner, range)?);
            }
            out
        }
        _ => adaptive_predictions(log, spec)?,
    };
    log.with_predictions(predictions)
}

fn adaptive_predictions(log: &ExperimentLog, spec: &OutcomeModelSpec) -> Result<Vec<Vec<f64>>> {
    let mut model = new_model(spec, log.num_arms(), log.num_covariates())?;
    let records = log.records();
    let mut out = Vec::with_capacity(records.len());
    let groups: Vec<std::ops::Range<usize>> = match log.blocks() {
        Some(b) => b.ranges().collect(),
        None => (0..records.len()).map(|t| t..t + 1).collect(),
    };
    for range in groups {
        for r in &records[range.clone()] {
            out.push(model.predict(&r.covariates));
        }
        for r in &records[range] {
            model.observe(&r.covariates, r.arm, r.outcome);
        }
    }
    Ok(out)
}

/// Predictions from a model fitted on every unit, and the arms that had no
/// units (predicted as zero).
#[derive(Debug, Clone, PartialEq)]
pub struct AllUnitsFit {
    pub predictions: Vec<Vec<f64>>,
    pub empty_arms: Vec<usize>,
}

pub fn predict_all_units(log: &ExperimentLog, inner: &OutcomeModelSpec) -> Result<AllUnitsFit> {
    let mut model = new_model(inner, log.num_arms(), log.num_covariates())?;
    let mut counts = vec![0usize; log.num_arms()];
    for r in log.records() {
        model.observe(&r.covariates, r.arm, r.outcome);
        counts[r.arm] += 1;
    }
    let predictions = log
        .records()
        .iter()
        .map(|r| model.predict(&r.covariates))
        .collect();
    Ok(AllUnitsFit {
        predictions,
        empty_arms: (0..counts.len()).filter(|&z| counts[z] == 0).collect(),
    })
}

/// Contiguous folds with the first `T mod G` one unit longer.
pub fn fold_ranges(units: usize, folds: usize) -> Result<Vec<std::ops::Range<usize>>> {
    if folds < 2 {
        return Err(Error::InvalidModel(format!(
            "cross-fitting needs at least 2 folds, got {folds}"
        )));
    }
    if folds > units {
        return Err(Error::TooFewUnits {
            needed: folds,
            got: units,
        });
    }
    let base = units / folds;
    let extra = units % folds;
    let mut start = 0;
    Ok((0..folds)
        .map(|g| {
            let len = base + usize::from(g < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

fn out_of_fold(
    log: &ExperimentLog,
    inner: &OutcomeModelSpec,
    fold: std::ops::Range<usize>,
) -> Result<Vec<Vec<f64>>> {
    let mut model = new_model(inner, log.num_arms(), log.num_covariates())?;
    for (t, r) in log.records().iter().enumerate() {
        if !fold.contains(&t) {
            model.observe(&r.covariates, r.arm, r.outcome);
        }
    }
    Ok(log.records()[fold]
        .iter()
        .map(|r| model.predict(&r.covariates))
        .collect())
}

/// A regression-adjusted estimate of the arm means with a diagonal
/// residual-variance covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedEstimate {
    /// Estimated `Ȳ(z)`.
    pub arm_means: Vec<f64>,
    /// `C` applied to `arm_means`.
    pub tau_hat: Vec<f64>,
    /// Estimated covariance of `tau_hat`.
    pub cov: DMatrix<f64>,
}

/// One fold's piece of a cross-fitted estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldEstimate {
    /// `|T_g| / T`.
    pub weight: f64,
    pub estimate: AdjustedEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossFitEstimate {
    pub combined: AdjustedEstimate,
    pub folds: Vec<FoldEstimate>,
}

/// `N_z⁻¹ Σ_{Z_t=z} (Y_t − m̂_t(z)) + n⁻¹ Σ_t m̂_t(z)` over `units`, with
/// variance `Σ_z s²_z / N_z` of the residuals.
fn adjusted_mean(
    log: &ExperimentLog,
    predictions: &[Vec<f64>],
    units: std::ops::Range<usize>,
    contrast: &Contrast,
    fold: usize,
) -> Result<AdjustedEstimate> {
    let k = log.num_arms();
    let records = &log.records()[units.clone()];
    let n = records.len() as f64;
    let preds = &predictions[units];
    let mut arm_means = Vec::with_capacity(k);
    let mut var = DMatrix::zeros(k, k);
    for z in 0..k {
        let resid: Vec<f64> = records
            .iter()
            .zip(preds)
            .filter(|(r, _)| r.arm == z)
            .map(|(r, m)| r.outcome - m[z])
            .collect();
        if resid.is_empty() {
            return Err(Error::EmptyFoldArm { fold, arm: z + 1 });
        }
        if resid.len() < 2 {
            return Err(Error::SparseArm {
                arm: z + 1,
                count: resid.len(),
                needed: 2,
            });
        }
        let nz = resid.len() as f64;
        let rbar = resid.iter().sum::<f64>() / nz;
        let s2 = resid.iter().map(|e| (e - rbar) * (e - rbar)).sum::<f64>() / (nz - 1.0);
        let mbar = preds.iter().map(|m| m[z]).sum::<f64>() / n;
        arm_means.push(rbar + mbar);
        var[(z, z)] = s2 / nz;
    }
    Ok(AdjustedEstimate {
        tau_hat: contrast.apply(&arm_means)?,
        cov: contrast.project(&var)?,
        arm_means,
    })
}

/// The all-units adjusted estimator with `inner` fitted on every unit.
pub fn all_units_estimate(
    log: &ExperimentLog,
    inner: &OutcomeModelSpec,
    contrast: &Contrast,
) -> Result<AdjustedEstimate> {
    contrast.check_arms(log.num_arms())?;
    let fit = predict_all_units(log, inner)?;
    if let Some(&z) = fit.empty_arms.first() {
        return Err(Error::SparseArm {
            arm: z + 1,
            count: 0,
            needed: 2,
        });
    }
    adjusted_mean(log, &fit.predictions, 0..log.num_units(), contrast, 1)
}

/// Cross-fitted estimate over `folds` contiguous folds, returning the
/// fold-size-weighted combination and the per-fold pieces.
///
/// The combined covariance is `Σ_g w_g² Cov_g`.
pub fn crossfit_estimate(
    log: &ExperimentLog,
    folds: usize,
    inner: &OutcomeModelSpec,
    contrast: &Contrast,
) -> Result<CrossFitEstimate> {
    contrast.check_arms(log.num_arms())?;
    OutcomeModelSpec::CrossFit {
        folds,
        inner: Box::new(inner.clone()),
    }
    .validate(log.num_covariates())?;
    let t = log.num_units() as f64;
    let k = log.num_arms();
    let q = contrast.num_estimands();
    let mut pieces = Vec::with_capacity(folds);
    let mut arm_means = vec![0.0; k];
    let mut cov = DMatrix::zeros(q, q);
    let mut predictions = vec![Vec::new(); log.num_units()];
    for (g, range) in fold_ranges(log.num_units(), folds)?.into_iter().enumerate() {
        for (i, m) in out_of_fold(log, inner, range.clone())?
            .into_iter()
            .enumerate()
        {
            predictions[range.start + i] = m;
        }
        let est = adjusted_mean(log, &predictions, range.clone(), contrast, g + 1)?;
        let w = range.len() as f64 / t;
        arm_means
            .iter_mut()
            .zip(&est.arm_means)
            .for_each(|(a, b)| *a += w * b);
        cov += &est.cov * (w * w);
        pieces.push(FoldEstimate {
            weight: w,
            estimate: est,
        });
    }
    Ok(CrossFitEstimate {
        combined: AdjustedEstimate {
            tau_hat: contrast.apply(&arm_means)?,
            cov,
            arm_means,
        },
        folds: pieces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::UnitRecord;

    fn rec(x: f64, arm: usize, y: f64) -> UnitRecord {
        UnitRecord::new(vec![x], arm, vec![0.5, 0.5], y)
    }

    #[test]
    fn zero_and_running_mean() {
        let past = vec![rec(0.0, 0, 2.0), rec(1.0, 0, 4.0), rec(3.0, 1, -1.0)];
        let cur = vec![vec![0.5]];
        let h = HistoryView::new(&past, &cur, 2);
        assert_eq!(
            predict_adaptive(&OutcomeModelSpec::Zero, &h, &[0.5]).unwrap(),
            vec![0.0, 0.0]
        );
        assert_eq!(
            predict_adaptive(&OutcomeModelSpec::RunningMean, &h, &[0.5]).unwrap(),
            vec![3.0, -1.0]
        );
        let empty = HistoryView::new(&[], &cur, 2);
        assert_eq!(
            predict_adaptive(&OutcomeModelSpec::RunningMean, &empty, &[0.5]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn least_squares_interpolates_noiseless_lines() {
        let mut past = Vec::new();
        for i in 0..10 {
            let x = i as f64 * 0.37 - 1.0;
            past.push(rec(
                x,
                i % 2,
                if i % 2 == 0 {
                    1.5 - 2.0 * x
                } else {
                    -0.25 + 3.0 * x
                },
            ));
        }
        let cur = vec![vec![0.8]];
        let h = HistoryView::new(&past, &cur, 2);
        let m = predict_adaptive(
            &OutcomeModelSpec::OnlineLeastSquares { min_obs: None },
            &h,
            &[0.8],
        )
        .unwrap();
        assert!((m[0] - (1.5 - 1.6)).abs() < 1e-8 * 1.0_f64.max(m[0].abs()));
        assert!((m[1] - (-0.25 + 2.4)).abs() < 1e-8 * m[1].abs());
    }

    #[test]
    fn least_squares_falls_back_when_singular() {
        // identical covariates: the normal equations are singular
        let past = vec![rec(1.0, 0, 2.0), rec(1.0, 0, 4.0), rec(1.0, 0, 6.0)];
        let cur = vec![vec![0.0]];
        let h = HistoryView::new(&past, &cur, 2);
        let m = predict_adaptive(
            &OutcomeModelSpec::OnlineLeastSquares { min_obs: None },
            &h,
            &[0.0],
        )
        .unwrap();
        assert_eq!(m, vec![4.0, 0.0]);
        assert!(OutcomeModelSpec::OnlineLeastSquares { min_obs: Some(2) }
            .validate(1)
            .is_err());
    }

    #[test]
    fn knn_means_of_nearest() {
        let past = vec![
            rec(0.0, 0, 1.0),
            rec(1.0, 0, 3.0),
            rec(5.0, 0, 100.0),
            rec(0.9, 1, 7.0),
        ];
        let cur = vec![vec![0.4]];
        let h = HistoryView::new(&past, &cur, 2);
        let m =
            predict_adaptive(&OutcomeModelSpec::KNearestNeighbors { k: 2 }, &h, &[0.4]).unwrap();
        assert_eq!(m, vec![2.0, 7.0]);
        // tie at distance 0.5 on both sides goes to the earlier unit
        let m =
            predict_adaptive(&OutcomeModelSpec::KNearestNeighbors { k: 1 }, &h, &[0.5]).unwrap();
        assert_eq!(m[0], 1.0);
    }

    #[test]
    fn knn_sorted_path_matches_brute_force() {
        let mut fast = NearestNeighbors::new(1, 1, 3);
        let mut brute = NearestNeighbors::new(1, 1, 3);
        // fill the unsorted store directly so both query paths see the same points
        let xs = [0.3, -1.0, 0.3, 2.0, 0.7, -0.1, 0.3, 1.1, -1.0, 0.5];
        for (i, x) in xs.iter().enumerate() {
            fast.observe(&[*x], 0, i as f64);
            brute.arms[0].points.push((vec![*x], i as f64));
        }
        for q in [-2.0, -1.0, 0.0, 0.3, 0.4, 0.5, 0.9, 3.0] {
            let a = fast.arms[0].query_sorted(q, 3);
            let b = brute.arms[0].query_brute(&[q], 3);
            assert_eq!(a, b, "query {q}");
        }
    }

    #[test]
    fn folds_are_contiguous_and_balanced() {
        let f = fold_ranges(7, 3).unwrap();
        assert_eq!(f, vec![0..3, 3..5, 5..7]);
        assert!(fold_ranges(5, 1).is_err());
    }

    fn linear_log(n: usize) -> ExperimentLog {
        let recs = (0..n)
            .map(|t| {
                let x = ((t * 7) % 11) as f64 / 3.0;
                let z = (t * 5 + t / 3) % 2;
                rec(x, z, 1.0 + x * (1.0 + z as f64))
            })
            .collect();
        ExperimentLog::new(2, recs, None).unwrap()
    }

    #[test]
    fn all_units_matches_adaptive_fit_at_the_end() {
        let log = linear_log(30);
        let ols = OutcomeModelSpec::OnlineLeastSquares { min_obs: None };
        let fit = predict_all_units(&log, &ols).unwrap();
        let x = &log.records()[4].covariates;
        let cur = vec![x.clone()];
        let h = HistoryView::new(log.records(), &cur, 2);
        assert_eq!(fit.predictions[4], predict_adaptive(&ols, &h, x).unwrap());
        assert!(fit.empty_arms.is_empty());
    }

    #[test]
    fn constant_outcomes_predict_constant() {
        let recs = (0..12).map(|t| rec(t as f64, t % 2, 4.5)).collect();
        let log = ExperimentLog::new(2, recs, None).unwrap();
        let fit = predict_all_units(
            &log,
            &OutcomeModelSpec::OnlineLeastSquares { min_obs: None },
        )
        .unwrap();
        for m in fit.predictions {
            assert!((m[0] - 4.5).abs() < 1e-9 && (m[1] - 4.5).abs() < 1e-9);
        }
    }

    #[test]
    fn crossfit_symmetric_folds() {
        let half: Vec<UnitRecord> = (0..10)
            .map(|t| rec(t as f64 * 0.5, t % 2, 2.0 + (t % 3) as f64))
            .collect();
        let mut recs = half.clone();
        recs.extend(half);
        let log = ExperimentLog::new(2, recs, None).unwrap();
        let est = crossfit_estimate(
            &log,
            2,
            &OutcomeModelSpec::OnlineLeastSquares { min_obs: None },
            &Contrast::difference(),
        )
        .unwrap();
        let a = &est.folds[0].estimate.tau_hat;
        let b = &est.folds[1].estimate.tau_hat;
        assert_eq!(a, b);
        assert!((est.combined.tau_hat[0] - a[0]).abs() < 1e-12);
    }

    #[test]
    fn crossfit_reports_empty_cells() {
        let recs = (0..8)
            .map(|t| rec(t as f64, usize::from(t >= 4), 1.0))
            .collect();
        let log = ExperimentLog::new(2, recs, None).unwrap();
        let err = crossfit_estimate(
            &log,
            2,
            &OutcomeModelSpec::RunningMean,
            &Contrast::difference(),
        )
        .unwrap_err();
        assert!(err
            .to_string()
            .contains("empty fold-arm cell; increase fold size"));
        assert!(crossfit_estimate(
            &log,
            1,
            &OutcomeModelSpec::RunningMean,
            &Contrast::difference()
        )
        .is_err());
    }
}
