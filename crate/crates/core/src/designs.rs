//! Adaptive randomization designs.
//!
//! A design maps the history `H_t` to assignment probabilities. Unit-level
//! designs return `e_t(·)`; block designs return a joint distribution over
//! candidate within-block assignments together with per-unit marginals.
//! Every map here is a pure function of its inputs so that the enumeration
//! oracle can walk all histories.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::HistoryView;
use crate::linalg::{eigen_extremes, inverse_symmetric};
use crate::population::{ExperimentLog, FinitePopulation, UnitRecord};

/// Tolerance on the probabilities of one step summing to one.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Relative ridge added to a singular covariate covariance.
pub const MAHALANOBIS_RIDGE: f64 = 1e-8;

/// Per-time exploration rate of the ε-greedy rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExploreSchedule {
    /// `ε_t = ε`.
    Constant { epsilon: f64 },
    /// `ε_t = t^(-1/2 + δ)`, which vanishes for `δ < 1/2`.
    Power { delta: f64 },
}

impl ExploreSchedule {
    pub fn rate(&self, t: usize) -> f64 {
        match *self {
            ExploreSchedule::Constant { epsilon } => epsilon,
            ExploreSchedule::Power { delta } => (t as f64).powf(delta - 0.5),
        }
    }
}

fn default_efron_bias() -> f64 {
    2.0 / 3.0
}

fn default_pair_bias() -> f64 {
    0.75
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    /// Independent draws from a fixed probability vector.
    Bernoulli { probs: Vec<f64> },
    /// Uniform for `t ≤ warmup`; afterwards the arm with the highest
    /// observed mean gets `1 − ε_t` and the rest share `ε_t`.
    EpsilonGreedy {
        warmup: usize,
        explore: ExploreSchedule,
    },
    /// Efron's biased coin within strata given by covariate signs.
    EfronBiasedCoin {
        #[serde(default = "default_efron_bias")]
        bias: f64,
    },
    /// Pairs arrive together; the assignment lowering covariate imbalance
    /// is taken with probability `bias`.
    PairwiseSequential {
        #[serde(default = "default_pair_bias")]
        bias: f64,
    },
    /// Best-choice rerandomization within each arriving block.
    SequentialRerandomization {
        accept_count: usize,
        treated_per_block: usize,
    },
}

impl DesignSpec {
    /// Whether the design assigns whole blocks at once.
    pub fn is_block(&self) -> bool {
        matches!(
            self,
            DesignSpec::PairwiseSequential { .. } | DesignSpec::SequentialRerandomization { .. }
        )
    }

    pub fn validate(&self, num_arms: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidDesign(m));
        match self {
            DesignSpec::Bernoulli { probs } => {
                if probs.len() != num_arms {
                    return bad(format!(
                        "{} Bernoulli probabilities for {num_arms} arms",
                        probs.len()
                    ));
                }
                AssignmentProbs::new(probs.clone()).map(|_| ())
            }
            DesignSpec::EpsilonGreedy { warmup, explore } => {
                if *warmup < 1 {
                    return bad("warmup must be at least 1".into());
                }
                match *explore {
                    ExploreSchedule::Constant { epsilon } if !(epsilon > 0.0 && epsilon < 1.0) => {
                        bad(format!("exploration rate {epsilon} is not in (0, 1)"))
                    }
                    ExploreSchedule::Power { delta } if !(delta < 0.5) || !delta.is_finite() => {
                        bad(format!(
                            "exploration exponent delta = {delta} must be below 1/2"
                        ))
                    }
                    _ => Ok(()),
                }
            }
            DesignSpec::EfronBiasedCoin { bias } | DesignSpec::PairwiseSequential { bias } => {
                if !(*bias > 0.5 && *bias < 1.0) {
                    return bad(format!("bias {bias} is not in (1/2, 1)"));
                }
                if matches!(self, DesignSpec::PairwiseSequential { .. }) && num_arms != 2 {
                    return bad("pairwise sequential randomization needs two arms".into());
                }
                Ok(())
            }
            DesignSpec::SequentialRerandomization {
                accept_count,
                treated_per_block,
            } => {
                if *accept_count < 1 {
                    return bad("accept_count must be at least 1".into());
                }
                if *treated_per_block < 1 {
                    return bad("treated_per_block must be at least 1".into());
                }
                if num_arms != 2 {
                    return bad("sequential rerandomization needs two arms".into());
                }
                Ok(())
            }
        }
    }
}

/// A point `e_t(·)` in the open probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentProbs(Vec<f64>);

impl AssignmentProbs {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        check_simplex(&probs, "assignment probabilities")?;
        Ok(AssignmentProbs(probs))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

fn check_simplex(p: &[f64], what: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::InvalidDesign(format!("{what} are empty")));
    }
    if let Some(v) = p.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
        return Err(Error::InvalidDesign(format!(
            "{what} must lie in (0, 1), found {v}"
        )));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidDesign(format!("{what} sum to {sum}")));
    }
    Ok(())
}

/// Joint distribution of one block's assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAssignmentProbs {
    candidates: Vec<Vec<usize>>,
    probs: Vec<f64>,
    marginals: Vec<Vec<f64>>,
}

impl BlockAssignmentProbs {
    pub fn new(candidates: Vec<Vec<usize>>, probs: Vec<f64>, num_arms: usize) -> Result<Self> {
        if candidates.is_empty() || candidates.len() != probs.len() {
            return Err(Error::InvalidDesign(
                "candidate and probability lists must be non-empty and of equal length".into(),
            ));
        }
        let n = candidates[0].len();
        if candidates
            .iter()
            .any(|c| c.len() != n || c.iter().any(|&z| z >= num_arms))
        {
            return Err(Error::InvalidDesign(
                "malformed candidate assignment".into(),
            ));
        }
        if probs.len() == 1 {
            // a single candidate can never have interior marginals
            return Err(Error::InvalidDesign(
                "a one-point block distribution leaves marginals at 0 or 1".into(),
            ));
        }
        check_simplex(&probs, "joint block probabilities")?;
        let mut marginals = vec![vec![0.0; num_arms]; n];
        for (c, p) in candidates.iter().zip(&probs) {
            for (i, &z) in c.iter().enumerate() {
                marginals[i][z] += p;
            }
        }
        for (i, m) in marginals.iter().enumerate() {
            if let Some(v) = m.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
                return Err(Error::InvalidDesign(format!(
                    "block unit {} has marginal probability {v}",
                    i + 1
                )));
            }
        }
        Ok(BlockAssignmentProbs {
            candidates,
            probs,
            marginals,
        })
    }

    /// Uniform distribution over `candidates`, with marginals from exact counts.
    fn uniform(candidates: Vec<Vec<usize>>, num_arms: usize) -> Result<Self> {
        let m = candidates.len();
        let mut out = Self::new(candidates, vec![1.0 / m as f64; m], num_arms)?;
        let n = out.candidates[0].len();
        let mut counts = vec![vec![0usize; num_arms]; n];
        for c in &out.candidates {
            for (i, &z) in c.iter().enumerate() {
                counts[i][z] += 1;
            }
        }
        out.marginals = counts
            .iter()
            .map(|row| row.iter().map(|&c| c as f64 / m as f64).collect())
            .collect();
        Ok(out)
    }

    pub fn candidates(&self) -> &[Vec<usize>] {
        &self.candidates
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `e_{ti}(z)` for each unit of the block.
    pub fn marginals(&self) -> &[Vec<f64>] {
        &self.marginals
    }
}

/// `e_t(·)` for a unit-level design.
pub fn assignment_probs(design: &DesignSpec, history: &HistoryView<'_>) -> Result<AssignmentProbs> {
    let k = history.num_arms;
    let t = history.time();
    match design {
        DesignSpec::Bernoulli { probs } => {
            if probs.len() != k {
                return Err(Error::InvalidDesign(format!(
                    "{} Bernoulli probabilities for {k} arms",
                    probs.len()
                )));
            }
            AssignmentProbs::new(probs.clone())
        }
        DesignSpec::EpsilonGreedy { warmup, explore } => {
            if t <= *warmup {
                return AssignmentProbs::new(vec![1.0 / k as f64; k]);
            }
            let eps = explore.rate(t);
            let lead = leading_arm(history);
            let rest = eps / (k - 1) as f64;
            let probs = (0..k)
                .map(|z| if z == lead { 1.0 - eps } else { rest })
                .collect();
            AssignmentProbs::new(probs)
        }
        DesignSpec::EfronBiasedCoin { bias } => {
            let x = history
                .current
                .first()
                .ok_or_else(|| Error::InvalidDesign("no current unit in history".into()))?;
            let stratum = sign_pattern(x);
            let mut counts = vec![0usize; k];
            for r in history.past {
                if sign_pattern(&r.covariates) == stratum {
                    counts[r.arm] += 1;
                }
            }
            let min = *counts.iter().min().unwrap();
            let lagging = counts.iter().filter(|&&c| c == min).count();
            if lagging == k {
                return AssignmentProbs::new(vec![1.0 / k as f64; k]);
            }
            let hi = bias / lagging as f64;
            let lo = (1.0 - bias) / (k - lagging) as f64;
            AssignmentProbs::new(
                counts
                    .iter()
                    .map(|&c| if c == min { hi } else { lo })
                    .collect(),
            )
        }
        DesignSpec::PairwiseSequential { .. } | DesignSpec::SequentialRerandomization { .. } => {
            Err(Error::InvalidDesign(
                "block design queried for unit-level probabilities".into(),
            ))
        }
    }
}

/// Highest observed mean, ties to the lowest index; unobserved arms never lead
/// unless no arm has been observed.
fn leading_arm(history: &HistoryView<'_>) -> usize {
    let mut best = 0;
    let mut best_mean = f64::NEG_INFINITY;
    for (z, (n, s)) in history.arm_totals().into_iter().enumerate() {
        if n > 0 {
            let mean = s / n as f64;
            if mean > best_mean {
                best_mean = mean;
                best = z;
            }
        }
    }
    best
}

fn sign_pattern(x: &[f64]) -> u64 {
    x.iter().take(64).enumerate().fold(
        0,
        |acc, (j, v)| if *v >= 0.0 { acc | (1 << j) } else { acc },
    )
}

/// Joint assignment distribution for the block in `history.current`.
pub fn block_assignment_probs(
    design: &DesignSpec,
    history: &HistoryView<'_>,
) -> Result<BlockAssignmentProbs> {
    let n = history.current.len();
    match design {
        DesignSpec::SequentialRerandomization {
            accept_count,
            treated_per_block,
        } => {
            design.validate(history.num_arms)?;
            let k = *treated_per_block;
            if k >= n {
                return Err(Error::InvalidDesign(format!(
                    "treated_per_block = {k} must be below the block size {n}"
                )));
            }
            let balance = Balance::new(history)?;
            let candidates = combinations(n, k);
            let scores: Vec<f64> = candidates
                .iter()
                .map(|treated| balance.score(&candidate_arms(n, treated)))
                .collect();
            let mut order: Vec<usize> = (0..candidates.len()).collect();
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
            let mut accepted = (*accept_count).min(order.len());
            while !covers_both_arms(n, order[..accepted].iter().map(|&i| &candidates[i])) {
                accepted += 1;
            }
            let chosen = order[..accepted]
                .iter()
                .map(|&i| candidate_arms(n, &candidates[i]))
                .collect();
            BlockAssignmentProbs::uniform(chosen, 2)
        }
        DesignSpec::PairwiseSequential { bias } => {
            design.validate(history.num_arms)?;
            if n != 2 {
                return Err(Error::InvalidDesign(format!(
                    "pairwise sequential randomization needs blocks of 2, got {n}"
                )));
            }
            let balance = Balance::new(history)?;
            let first = vec![1, 0];
            let second = vec![0, 1];
            let (a, b) = (balance.score(&first), balance.score(&second));
            let probs = if a < b {
                vec![*bias, 1.0 - bias]
            } else if b < a {
                vec![1.0 - bias, *bias]
            } else {
                vec![0.5, 0.5]
            };
            BlockAssignmentProbs::new(vec![first, second], probs, 2)
        }
        _ => Err(Error::InvalidDesign(
            "unit-level design queried for block probabilities".into(),
        )),
    }
}

fn candidate_arms(n: usize, treated: &[usize]) -> Vec<usize> {
    let mut arms = vec![0; n];
    for &i in treated {
        arms[i] = 1;
    }
    arms
}

fn covers_both_arms<'a>(n: usize, accepted: impl Iterator<Item = &'a Vec<usize>>) -> bool {
    let mut treated = vec![false; n];
    let mut control = vec![false; n];
    for c in accepted {
        let arms = candidate_arms(n, c);
        for (i, z) in arms.into_iter().enumerate() {
            if z == 1 {
                treated[i] = true;
            } else {
                control[i] = true;
            }
        }
    }
    treated.iter().zip(&control).all(|(t, c)| *t && *c)
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Running treated-versus-control covariate balance over the past blocks
/// plus the block being assigned.
struct Balance<'a> {
    current: &'a [Vec<f64>],
    treated_sum: Vec<f64>,
    treated_n: usize,
    control_sum: Vec<f64>,
    control_n: usize,
    metric: Metric,
}

impl<'a> Balance<'a> {
    fn new(history: &HistoryView<'a>) -> Result<Self> {
        let j = history.current.first().map_or(0, Vec::len);
        let mut treated_sum = vec![0.0; j];
        let mut control_sum = vec![0.0; j];
        let (mut treated_n, mut control_n) = (0, 0);
        for r in history.past {
            if r.covariates.len() != j {
                return Err(Error::DimensionMismatch(
                    "covariate dimension changes across units".into(),
                ));
            }
            let (sum, n) = if r.arm == 1 {
                (&mut treated_sum, &mut treated_n)
            } else {
                (&mut control_sum, &mut control_n)
            };
            sum.iter_mut().zip(&r.covariates).for_each(|(s, x)| *s += x);
            *n += 1;
        }
        let all = history
            .past
            .iter()
            .map(|r| r.covariates.as_slice())
            .chain(history.current.iter().map(Vec::as_slice));
        let cov = sample_covariance(all, j);
        Ok(Balance {
            current: history.current,
            treated_sum,
            treated_n,
            control_sum,
            control_n,
            metric: Metric::new(&cov)?,
        })
    }

    fn score(&self, arms: &[usize]) -> f64 {
        let j = self.treated_sum.len();
        let mut t = self.treated_sum.clone();
        let mut c = self.control_sum.clone();
        let (mut nt, mut nc) = (self.treated_n, self.control_n);
        for (x, &z) in self.current.iter().zip(arms) {
            let (sum, n) = if z == 1 {
                (&mut t, &mut nt)
            } else {
                (&mut c, &mut nc)
            };
            sum.iter_mut().zip(x).for_each(|(s, v)| *s += v);
            *n += 1;
        }
        if nt == 0 || nc == 0 {
            return 0.0;
        }
        let d: Vec<f64> = (0..j)
            .map(|i| t[i] / nt as f64 - c[i] / nc as f64)
            .collect();
        self.metric.distance(&d)
    }
}

fn sample_covariance<'x>(rows: impl Iterator<Item = &'x [f64]> + Clone, j: usize) -> DMatrix<f64> {
    let mut n = 0usize;
    let mut mean = vec![0.0; j];
    for x in rows.clone() {
        n += 1;
        mean.iter_mut().zip(x).for_each(|(m, v)| *m += v);
    }
    if n < 2 {
        return DMatrix::zeros(j, j);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DMatrix::zeros(j, j);
    for x in rows {
        for a in 0..j {
            let da = x[a] - mean[a];
            for b in 0..=a {
                cov[(a, b)] += da * (x[b] - mean[b]);
            }
        }
    }
    for a in 0..j {
        for b in 0..a {
            cov[(b, a)] = cov[(a, b)];
        }
    }
    cov / (n - 1) as f64
}

/// `d ↦ dᵀ Σ⁻¹ d` with the ridge fallback for singular `Σ`.
struct Metric {
    inverse: Option<DMatrix<f64>>,
}

impl Metric {
    fn new(cov: &DMatrix<f64>) -> Result<Self> {
        let j = cov.nrows();
        if j == 0 {
            return Ok(Metric { inverse: None });
        }
        let trace = cov.trace();
        if !(trace > 0.0) {
            // constant covariates: every candidate balances equally
            return Ok(Metric { inverse: None });
        }
        let (min, max) = eigen_extremes(cov);
        let regularized = if min <= crate::linalg::INVERSION_TOLERANCE * max {
            cov + DMatrix::identity(j, j) * (MAHALANOBIS_RIDGE * trace / j as f64)
        } else {
            cov.clone()
        };
        let inverse = inverse_symmetric(&regularized, 0.0)
            .map_err(|eigenvalue| Error::SingularCovariance { eigenvalue })?;
        Ok(Metric {
            inverse: Some(inverse),
        })
    }

    fn distance(&self, d: &[f64]) -> f64 {
        match &self.inverse {
            None => 0.0,
            Some(inv) => {
                let j = d.len();
                let mut acc = 0.0;
                for a in 0..j {
                    for b in 0..j {
                        acc += d[a] * inv[(a, b)] * d[b];
                    }
                }
                acc.max(0.0)
            }
        }
    }
}

/// `dᵀ Σ⁻¹ d` with `d = treated_mean − control_mean`.
pub fn mahalanobis_imbalance(
    treated_mean: &[f64],
    control_mean: &[f64],
    pooled_cov: &DMatrix<f64>,
) -> Result<f64> {
    let j = treated_mean.len();
    if control_mean.len() != j || pooled_cov.nrows() != j || pooled_cov.ncols() != j {
        return Err(Error::DimensionMismatch(format!(
            "means of length {j} and {} with a {}x{} covariance",
            control_mean.len(),
            pooled_cov.nrows(),
            pooled_cov.ncols()
        )));
    }
    let d: Vec<f64> = treated_mean
        .iter()
        .zip(control_mean)
        .map(|(a, b)| a - b)
        .collect();
    if d.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    Ok(Metric::new(pooled_cov)?.distance(&d))
}

/// Inverse-CDF draw from `e_t(·)` with a single uniform.
pub fn sample_assignment<R: Rng + ?Sized>(probs: &AssignmentProbs, rng: &mut R) -> usize {
    inverse_cdf(probs.as_slice(), rng.random::<f64>())
}

/// Index of the drawn candidate in `probs.candidates()`.
pub fn sample_block_assignment<R: Rng + ?Sized>(
    probs: &BlockAssignmentProbs,
    rng: &mut R,
) -> usize {
    inverse_cdf(probs.probs(), rng.random::<f64>())
}

fn inverse_cdf(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// Run one experiment on a fixed population. Predictions are left at zero.
///
/// A unit-level design used on a blocked population ignores the blocks.
pub fn simulate_experiment<R: Rng + ?Sized>(
    population: &FinitePopulation,
    design: &DesignSpec,
    rng: &mut R,
) -> Result<ExperimentLog> {
    let k = population.num_arms();
    design.validate(k)?;
    let mut records: Vec<UnitRecord> = Vec::with_capacity(population.num_units());
    if design.is_block() {
        let blocks = population.blocks().ok_or_else(|| {
            Error::InvalidDesign("block design requires a population with blocks".into())
        })?;
        for range in blocks.ranges() {
            let current: Vec<Vec<f64>> = range
                .clone()
                .map(|u| population.covariates(u).to_vec())
                .collect();
            let dist = block_assignment_probs(design, &HistoryView::new(&records, &current, k))?;
            let pick = sample_block_assignment(&dist, rng);
            for (i, u) in range.enumerate() {
                let z = dist.candidates()[pick][i];
                records.push(UnitRecord::new(
                    current[i].clone(),
                    z,
                    dist.marginals()[i].clone(),
                    population.outcome(u, z),
                ));
            }
        }
        ExperimentLog::new(k, records, population.blocks().cloned())
    } else {
        let mut current = vec![Vec::new()];
        for u in 0..population.num_units() {
            current[0] = population.covariates(u).to_vec();
            let probs = assignment_probs(design, &HistoryView::new(&records, &current, k))?;
            let z = sample_assignment(&probs, rng);
            records.push(UnitRecord::new(
                current[0].clone(),
                z,
                probs.into_vec(),
                population.outcome(u, z),
            ));
        }
        ExperimentLog::new(k, records, None)
    }
}
