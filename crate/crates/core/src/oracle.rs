//! Exact expectations by enumerating every assignment path.
//!
//! The walker visits the assignment tree depth first, carrying the product of
//! the design's probabilities. Complete paths are turned into ordinary
//! [`ExperimentLog`]s and evaluated with the shipping estimator code, so a
//! certification exercises the same arithmetic as an analysis.

use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::contrast::Contrast;
use crate::designs::{assignment_probs, block_assignment_probs, DesignSpec};
use crate::error::{Error, Result};
use crate::estimators::{
    arm_means, bt_weights, covariance_estimate, pseudo_outcomes, CovarianceKind, Estimator,
};
use crate::history::HistoryView;
use crate::linalg::{eigen_extremes, max_abs_diff, CompensatedSum, CompensatedVec};
use crate::outcome_models::{predict_adaptive, OutcomeModelSpec};
use crate::population::{
    true_estimand, BlockStructure, ExperimentLog, FinitePopulation, UnitRecord,
};

/// Largest number of complete paths the walker will visit.
pub const ENUMERATION_CAP: usize = 1 << 20;

/// Pass level for [`certify_identity`].
pub const CERTIFICATION_TOLERANCE: f64 = 1e-9;

/// One assignment step as seen by a visitor: the units assigned together,
/// the joint distribution over their arms and the model's predictions.
pub struct Node<'a> {
    pub units: Range<usize>,
    pub candidates: &'a [Vec<usize>],
    pub probs: &'a [f64],
    /// Per-unit marginal probabilities.
    pub marginals: &'a [Vec<f64>],
    pub predictions: &'a [Vec<f64>],
}

trait Visitor {
    fn node(&mut self, step: usize, path_prob: f64, node: &Node<'_>) -> Result<()>;
    fn leaf(&mut self, path_prob: f64, log: &ExperimentLog) -> Result<()>;
}

struct Walker<'a> {
    population: &'a FinitePopulation,
    design: &'a DesignSpec,
    model: &'a OutcomeModelSpec,
    steps: Vec<Range<usize>>,
    blocks: Option<BlockStructure>,
    leaves: usize,
}

impl<'a> Walker<'a> {
    fn new(
        population: &'a FinitePopulation,
        design: &'a DesignSpec,
        model: &'a OutcomeModelSpec,
    ) -> Result<Self> {
        let k = population.num_arms();
        design.validate(k)?;
        if !model.is_adaptive() && *model != OutcomeModelSpec::Oracle {
            return Err(Error::InvalidModel(format!(
                "{model:?} is not a function of the history and cannot be enumerated"
            )));
        }
        model.validate(population.num_covariates())?;
        let (steps, blocks) = if design.is_block() {
            let blocks = population.blocks().cloned().ok_or_else(|| {
                Error::InvalidDesign("block design requires a population with blocks".into())
            })?;
            (blocks.ranges().collect(), Some(blocks))
        } else {
            let t = population.num_units();
            let size = (k as f64).powi(t as i32);
            if size > ENUMERATION_CAP as f64 {
                return Err(Error::EnumerationCap {
                    size,
                    cap: ENUMERATION_CAP,
                });
            }
            ((0..t).map(|u| u..u + 1).collect(), None)
        };
        Ok(Walker {
            population,
            design,
            model,
            steps,
            blocks,
            leaves: 0,
        })
    }

    fn run(&mut self, visitor: &mut dyn Visitor) -> Result<()> {
        let mut records = Vec::with_capacity(self.population.num_units());
        self.walk(0, 1.0, &mut records, visitor)
    }

    fn walk(
        &mut self,
        step: usize,
        path_prob: f64,
        records: &mut Vec<UnitRecord>,
        visitor: &mut dyn Visitor,
    ) -> Result<()> {
        let pop = self.population;
        let k = pop.num_arms();
        if step == self.steps.len() {
            self.leaves += 1;
            if self.leaves > ENUMERATION_CAP {
                return Err(Error::EnumerationCap {
                    size: self.leaves as f64,
                    cap: ENUMERATION_CAP,
                });
            }
            let log = ExperimentLog::new(k, records.clone(), self.blocks.clone())?;
            return visitor.leaf(path_prob, &log);
        }
        let units = self.steps[step].clone();
        let current: Vec<Vec<f64>> = units.clone().map(|u| pop.covariates(u).to_vec()).collect();
        let history = HistoryView::new(records, &current, k);
        let predictions = units
            .clone()
            .zip(&current)
            .map(|(u, x)| match self.model {
                OutcomeModelSpec::Oracle => Ok(pop.outcomes(u).to_vec()),
                m => predict_adaptive(m, &history, x),
            })
            .collect::<Result<Vec<_>>>()?;
        let (candidates, probs, marginals) = if self.design.is_block() {
            let dist = block_assignment_probs(self.design, &history)?;
            (
                dist.candidates().to_vec(),
                dist.probs().to_vec(),
                dist.marginals().to_vec(),
            )
        } else {
            let p = assignment_probs(self.design, &history)?.into_vec();
            ((0..k).map(|z| vec![z]).collect(), p.clone(), vec![p])
        };
        visitor.node(
            step,
            path_prob,
            &Node {
                units: units.clone(),
                candidates: &candidates,
                probs: &probs,
                marginals: &marginals,
                predictions: &predictions,
            },
        )?;
        let start = records.len();
        for (cand, q) in candidates.iter().zip(&probs) {
            for (i, u) in units.clone().enumerate() {
                let mut r = UnitRecord::new(
                    current[i].clone(),
                    cand[i],
                    marginals[i].clone(),
                    pop.outcome(u, cand[i]),
                );
                r.predictions = predictions[i].clone();
                records.push(r);
            }
            self.walk(step + 1, path_prob * q, records, visitor)?;
            records.truncate(start);
        }
        Ok(())
    }
}

/// Exact quantities along the assignment tree for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepConditions {
    /// `e̲_t`, the smallest marginal probability over every reachable history.
    pub min_prob: f64,
    /// `v_t = max_z Var{1/e_t(z)}`, maximized over the units of a block.
    pub inverse_prob_variance: f64,
    /// `ω_t = max_z Var{m̂_t(z)}`.
    pub model_variance: f64,
    /// `L_t = max_z |Y_t(z)|`.
    pub max_abs_outcome: f64,
    /// `M_t`, the largest `|m̂_t(z)|` over every reachable history.
    pub max_abs_model: f64,
}

/// Exact moments of the standard statistics under one design and model.
#[derive(Debug, Clone)]
pub struct EnumerationResult {
    pub num_paths: usize,
    pub total_probability: f64,
    pub min_path_probability: f64,
    pub num_steps: usize,
    /// `E[Ŷ_ipw]` and `Cov(Ŷ_ipw)` of the arm-level estimator.
    pub mean_ipw: Vec<f64>,
    pub cov_ipw: DMatrix<f64>,
    pub mean_aipw: Vec<f64>,
    pub cov_aipw: DMatrix<f64>,
    /// `E[V]` for every covariance kind defined on this instance.
    pub expected_covariances: Vec<(CovarianceKind, DMatrix<f64>)>,
    /// `T⁻¹ Σ_t E{Cov(ρ_t Ŷ_t,ipw | H_t)}`.
    pub v_ipw: DMatrix<f64>,
    /// `T⁻¹ Σ_t E{Cov(ρ_t Ŷ_t,aipw | H_t)}`.
    pub v_aipw: DMatrix<f64>,
    /// Unit designs only: `diag[T⁻¹ Σ E{1/e_t(z)} Y_t(z)²] − T⁻¹ Σ Y_t Y_tᵀ`.
    pub v_ipw_closed_form: Option<DMatrix<f64>>,
    /// Unit designs only: `diag[T⁻¹ Σ E{A_t(z)²/e_t(z)}] − T⁻¹ Σ E(A_t A_tᵀ)`.
    pub v_aipw_closed_form: Option<DMatrix<f64>>,
    /// Dispersion `S` of the (ρ-scaled group mean) potential-outcome vectors.
    pub s: DMatrix<f64>,
    /// `E[Ω]`, with `Ω` the sample covariance of `ρ_t (Ȳ_t − m̄_t)`.
    pub expected_omega: DMatrix<f64>,
    pub conditions: Vec<StepConditions>,
}

impl EnumerationResult {
    pub fn expected_covariance(&self, kind: CovarianceKind) -> Option<&DMatrix<f64>> {
        self.expected_covariances
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, m)| m)
    }
}

struct StepAccumulator {
    inv_e: Vec<CompensatedVec>,
    inv_e2: Vec<CompensatedVec>,
    m: Vec<CompensatedVec>,
    m2: Vec<CompensatedVec>,
    a2_over_e: CompensatedVec,
    aat: CompensatedVec,
    cond_ipw: CompensatedVec,
    cond_aipw: CompensatedVec,
    min_prob: f64,
    max_abs_model: f64,
}

struct MomentVisitor<'a> {
    population: &'a FinitePopulation,
    k: usize,
    rho: Vec<f64>,
    steps: Vec<StepAccumulator>,
    leaves: Vec<(f64, Vec<f64>, Vec<f64>)>,
    covariances: Vec<(CovarianceKind, CompensatedVec)>,
    omega: CompensatedVec,
    total: CompensatedSum,
}

fn flat_outer(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .flat_map(|x| b.iter().map(move |y| x * y))
        .collect()
}

fn to_matrix(k: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(k, k, v)
}

/// Sample covariance (divisor `T − 1`) of a list of vectors.
fn sample_covariance(rows: &[Vec<f64>], k: usize) -> DMatrix<f64> {
    let t = rows.len() as f64;
    let mut mean = vec![0.0; k];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x / t;
        }
    }
    let mut out = DMatrix::zeros(k, k);
    for r in rows {
        let d: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
        out += to_matrix(k, &flat_outer(&d, &d));
    }
    out / (t - 1.0)
}

impl Visitor for MomentVisitor<'_> {
    fn node(&mut self, step: usize, p: f64, node: &Node<'_>) -> Result<()> {
        let k = self.k;
        let pop = self.population;
        let rho = self.rho[step];
        let n = node.units.len() as f64;
        let acc = &mut self.steps[step];
        for (i, u) in node.units.clone().enumerate() {
            let e = &node.marginals[i];
            let m = &node.predictions[i];
            let inv: Vec<f64> = e.iter().map(|v| 1.0 / v).collect();
            acc.inv_e[i].add_scaled(&inv, p);
            acc.inv_e2[i].add_scaled(&inv.iter().map(|v| v * v).collect::<Vec<_>>(), p);
            acc.m[i].add_scaled(m, p);
            acc.m2[i].add_scaled(&m.iter().map(|v| v * v).collect::<Vec<_>>(), p);
            acc.min_prob = e.iter().copied().fold(acc.min_prob, f64::min);
            acc.max_abs_model = m.iter().fold(acc.max_abs_model, |a, v| a.max(v.abs()));
            if node.units.len() == 1 {
                let a: Vec<f64> = (0..k).map(|z| pop.outcome(u, z) - m[z]).collect();
                let d: Vec<f64> = (0..k).map(|z| a[z] * a[z] / e[z]).collect();
                let mut diag = vec![0.0; k * k];
                for z in 0..k {
                    diag[z * k + z] = d[z];
                }
                acc.a2_over_e.add_scaled(&diag, p);
                acc.aat.add_scaled(&flat_outer(&a, &a), p);
            }
        }
        // conditional law of the step's pseudo-outcome vectors
        let mut vals_ipw = Vec::with_capacity(node.candidates.len());
        let mut vals_aipw = Vec::with_capacity(node.candidates.len());
        for cand in node.candidates {
            let mut ipw = vec![0.0; k];
            let mut aipw = vec![0.0; k];
            for (i, u) in node.units.clone().enumerate() {
                for z in 0..k {
                    let w = if cand[i] == z {
                        1.0 / node.marginals[i][z]
                    } else {
                        0.0
                    };
                    let y = pop.outcome(u, z);
                    let m = node.predictions[i][z];
                    ipw[z] += rho * w * y / n;
                    aipw[z] += rho * (m + w * (y - m)) / n;
                }
            }
            vals_ipw.push(ipw);
            vals_aipw.push(aipw);
        }
        for (vals, target) in [
            (vals_ipw, &mut acc.cond_ipw),
            (vals_aipw, &mut acc.cond_aipw),
        ] {
            let mut mean = vec![0.0; k];
            for (v, q) in vals.iter().zip(node.probs) {
                for z in 0..k {
                    mean[z] += q * v[z];
                }
            }
            let mut cov = vec![0.0; k * k];
            for (v, q) in vals.iter().zip(node.probs) {
                let d: Vec<f64> = v.iter().zip(&mean).map(|(a, b)| a - b).collect();
                for (c, o) in cov.iter_mut().zip(flat_outer(&d, &d)) {
                    *c += q * o;
                }
            }
            target.add_scaled(&cov, p);
        }
        Ok(())
    }

    fn leaf(&mut self, p: f64, log: &ExperimentLog) -> Result<()> {
        let k = self.k;
        self.total.add(p);
        let trace = pseudo_outcomes(log)?;
        self.leaves.push((
            p,
            arm_means(&trace, Estimator::Ipw),
            arm_means(&trace, Estimator::Aipw),
        ));
        for (kind, acc) in &mut self.covariances {
            let v = covariance_estimate(&trace, *kind)?;
            acc.add_scaled(v.matrix.transpose().as_slice(), p);
        }
        if trace.num_steps() >= 2 {
            let rows: Vec<Vec<f64>> = (0..trace.num_steps())
                .map(|t| {
                    let range = match log.blocks() {
                        Some(b) => b.range(t),
                        None => t..t + 1,
                    };
                    let n = range.len() as f64;
                    let rho = trace.rho(t);
                    (0..k)
                        .map(|z| {
                            range
                                .clone()
                                .map(|u| {
                                    self.population.outcome(u, z) - log.records()[u].predictions[z]
                                })
                                .sum::<f64>()
                                * rho
                                / n
                        })
                        .collect()
                })
                .collect();
            let omega = sample_covariance(&rows, k);
            self.omega.add_scaled(omega.transpose().as_slice(), p);
        }
        Ok(())
    }
}

/// Group mean vectors `Ȳ_t` and the scales `ρ_t`.
fn group_means(population: &FinitePopulation, steps: &[Range<usize>]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k = population.num_arms();
    let t = steps.len();
    let total = population.num_units();
    let means = steps
        .iter()
        .map(|r| {
            let n = r.len() as f64;
            (0..k)
                .map(|z| r.clone().map(|u| population.outcome(u, z)).sum::<f64>() / n)
                .collect()
        })
        .collect();
    let rho = steps
        .iter()
        .map(|r| (t * r.len()) as f64 / total as f64)
        .collect();
    (means, rho)
}

/// `S`, the sample covariance of `ρ_t Ȳ_t` (of `Y_t` without blocks).
pub fn dispersion_matrix(population: &FinitePopulation, blocked: bool) -> DMatrix<f64> {
    let steps: Vec<Range<usize>> = match (blocked, population.blocks()) {
        (true, Some(b)) => b.ranges().collect(),
        _ => (0..population.num_units()).map(|u| u..u + 1).collect(),
    };
    let (means, rho) = group_means(population, &steps);
    let rows: Vec<Vec<f64>> = means
        .iter()
        .zip(&rho)
        .map(|(m, r)| m.iter().map(|v| r * v).collect())
        .collect();
    sample_covariance(&rows, population.num_arms())
}

/// `Σ_t b_t (Ȳ_t − Ȳ)(Ȳ_t − Ȳ)ᵀ` over the population's blocks.
pub fn weighted_group_dispersion(population: &FinitePopulation) -> Result<DMatrix<f64>> {
    let blocks = population
        .blocks()
        .ok_or_else(|| Error::InvalidPopulation("population has no blocks".into()))?;
    let steps: Vec<Range<usize>> = blocks.ranges().collect();
    let b = bt_weights(blocks.sizes())?;
    let (means, _) = group_means(population, &steps);
    let overall = population.mean_outcomes();
    let k = population.num_arms();
    let mut out = DMatrix::zeros(k, k);
    for (m, w) in means.iter().zip(&b) {
        let d: Vec<f64> = m.iter().zip(&overall).map(|(a, c)| a - c).collect();
        out += to_matrix(k, &flat_outer(&d, &d)) * *w;
    }
    Ok(out)
}

/// Enumerate every assignment path and return exact moments.
pub fn enumerate(
    population: &FinitePopulation,
    design: &DesignSpec,
    model: &OutcomeModelSpec,
) -> Result<EnumerationResult> {
    let mut walker = Walker::new(population, design, model)?;
    let k = population.num_arms();
    let steps = walker.steps.clone();
    let num_steps = steps.len();
    let (_, rho) = group_means(population, &steps);
    let has_b = walker
        .blocks
        .as_ref()
        .map(|b| bt_weights(b.sizes()).is_ok())
        .unwrap_or_else(|| bt_weights(&vec![1; num_steps]).is_ok());
    let kinds = if num_steps < 2 {
        Vec::new()
    } else {
        CovarianceKind::ALL
            .into_iter()
            .filter(|c| {
                has_b || !matches!(c, CovarianceKind::VhatAipwB | CovarianceKind::VtildeAipwB)
            })
            .collect()
    };
    let mut visitor = MomentVisitor {
        population,
        k,
        rho,
        steps: steps
            .iter()
            .map(|r| StepAccumulator {
                inv_e: vec![CompensatedVec::zeros(k); r.len()],
                inv_e2: vec![CompensatedVec::zeros(k); r.len()],
                m: vec![CompensatedVec::zeros(k); r.len()],
                m2: vec![CompensatedVec::zeros(k); r.len()],
                a2_over_e: CompensatedVec::zeros(k * k),
                aat: CompensatedVec::zeros(k * k),
                cond_ipw: CompensatedVec::zeros(k * k),
                cond_aipw: CompensatedVec::zeros(k * k),
                min_prob: f64::INFINITY,
                max_abs_model: 0.0,
            })
            .collect(),
        leaves: Vec::new(),
        covariances: kinds
            .into_iter()
            .map(|c| (c, CompensatedVec::zeros(k * k)))
            .collect(),
        omega: CompensatedVec::zeros(k * k),
        total: CompensatedSum::default(),
    };
    walker.run(&mut visitor)?;

    let (mean_ipw, cov_ipw) = leaf_moments(&visitor.leaves, k, |l| &l.1);
    let (mean_aipw, cov_aipw) = leaf_moments(&visitor.leaves, k, |l| &l.2);
    let tf = num_steps as f64;
    let mut v_ipw = DMatrix::zeros(k, k);
    let mut v_aipw = DMatrix::zeros(k, k);
    for s in &visitor.steps {
        v_ipw += to_matrix(k, &s.cond_ipw.values()) / tf;
        v_aipw += to_matrix(k, &s.cond_aipw.values()) / tf;
    }
    let unit_level = walker.blocks.is_none();
    let (v_ipw_closed_form, v_aipw_closed_form) = if unit_level {
        let mut vi = DMatrix::zeros(k, k);
        let mut va = DMatrix::zeros(k, k);
        for (t, s) in visitor.steps.iter().enumerate() {
            let inv = s.inv_e[0].values();
            let y = population.outcomes(t);
            for z in 0..k {
                vi[(z, z)] += inv[z] * y[z] * y[z] / tf;
            }
            vi -= to_matrix(k, &flat_outer(y, y)) / tf;
            va += (to_matrix(k, &s.a2_over_e.values()) - to_matrix(k, &s.aat.values())) / tf;
        }
        (Some(vi), Some(va))
    } else {
        (None, None)
    };
    let conditions = visitor
        .steps
        .iter()
        .zip(&steps)
        .map(|(s, range)| {
            let mut v = 0.0f64;
            let mut w = 0.0f64;
            let mut l = 0.0f64;
            for (i, u) in range.clone().enumerate() {
                let (e1, e2) = (s.inv_e[i].values(), s.inv_e2[i].values());
                let (m1, m2) = (s.m[i].values(), s.m2[i].values());
                for z in 0..k {
                    v = v.max(e2[z] - e1[z] * e1[z]);
                    w = w.max(m2[z] - m1[z] * m1[z]);
                    l = l.max(population.outcome(u, z).abs());
                }
            }
            StepConditions {
                min_prob: s.min_prob,
                inverse_prob_variance: v.max(0.0),
                model_variance: w.max(0.0),
                max_abs_outcome: l,
                max_abs_model: s.max_abs_model,
            }
        })
        .collect();
    Ok(EnumerationResult {
        num_paths: walker.leaves,
        total_probability: visitor.total.value(),
        min_path_probability: visitor
            .leaves
            .iter()
            .map(|l| l.0)
            .fold(f64::INFINITY, f64::min),
        num_steps,
        mean_ipw,
        cov_ipw,
        mean_aipw,
        cov_aipw,
        expected_covariances: visitor
            .covariances
            .iter()
            .map(|(c, acc)| (*c, to_matrix(k, &acc.values())))
            .collect(),
        v_ipw,
        v_aipw,
        v_ipw_closed_form,
        v_aipw_closed_form,
        s: dispersion_matrix(population, !unit_level),
        expected_omega: to_matrix(k, &visitor.omega.values()),
        conditions,
    })
}

/// Probability-weighted mean and centered covariance (second pass) of leaf values.
fn leaf_moments<L>(
    leaves: &[L],
    k: usize,
    value: impl Fn(&L) -> &Vec<f64>,
) -> (Vec<f64>, DMatrix<f64>)
where
    L: LeafProb,
{
    let mut mean = CompensatedVec::zeros(k);
    for l in leaves {
        mean.add_scaled(value(l), l.prob());
    }
    let mean = mean.values();
    let mut cov = CompensatedVec::zeros(k * k);
    for l in leaves {
        let d: Vec<f64> = value(l).iter().zip(&mean).map(|(a, b)| a - b).collect();
        cov.add_scaled(&flat_outer(&d, &d), l.prob());
    }
    (mean, to_matrix(k, &cov.values()))
}

trait LeafProb {
    fn prob(&self) -> f64;
}

impl LeafProb for (f64, Vec<f64>, Vec<f64>) {
    fn prob(&self) -> f64 {
        self.0
    }
}

/// Exact mean and covariance of an arbitrary statistic of the log.
#[derive(Debug, Clone)]
pub struct StatisticMoments {
    pub num_paths: usize,
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
}

struct StatisticVisitor<'f> {
    statistic: &'f dyn Fn(&ExperimentLog) -> Result<Vec<f64>>,
    leaves: Vec<(f64, Vec<f64>)>,
}

impl Visitor for StatisticVisitor<'_> {
    fn node(&mut self, _: usize, _: f64, _: &Node<'_>) -> Result<()> {
        Ok(())
    }

    fn leaf(&mut self, p: f64, log: &ExperimentLog) -> Result<()> {
        let v = (self.statistic)(log)?;
        if let Some((_, first)) = self.leaves.first() {
            if first.len() != v.len() {
                return Err(Error::DimensionMismatch(
                    "statistic length varies across paths".into(),
                ));
            }
        }
        self.leaves.push((p, v));
        Ok(())
    }
}

impl LeafProb for (f64, Vec<f64>) {
    fn prob(&self) -> f64 {
        self.0
    }
}

pub fn enumerate_statistic(
    population: &FinitePopulation,
    design: &DesignSpec,
    model: &OutcomeModelSpec,
    statistic: &dyn Fn(&ExperimentLog) -> Result<Vec<f64>>,
) -> Result<StatisticMoments> {
    let mut walker = Walker::new(population, design, model)?;
    let mut visitor = StatisticVisitor {
        statistic,
        leaves: Vec::new(),
    };
    walker.run(&mut visitor)?;
    let q = visitor.leaves.first().map_or(0, |l| l.1.len());
    let (mean, cov) = leaf_moments(&visitor.leaves, q, |l| &l.1);
    Ok(StatisticMoments {
        num_paths: walker.leaves,
        mean,
        cov,
    })
}

/// `e̲_t, v_t, ω_t, L_t, M_t` for every step.
pub fn exact_condition_quantities(
    population: &FinitePopulation,
    design: &DesignSpec,
    model: &OutcomeModelSpec,
) -> Result<Vec<StepConditions>> {
    Ok(enumerate(population, design, model)?.conditions)
}

/// A small instance on which identities are checked exactly.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub population: FinitePopulation,
    pub design: DesignSpec,
    pub model: OutcomeModelSpec,
    pub contrast: Contrast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub identity: String,
    pub instance: String,
    pub max_deviation: f64,
    pub passed: bool,
    pub detail: String,
}

/// Identity tags understood by [`certify_identity`].
pub const IDENTITY_TAGS: [&str; 9] = [
    "ipw_unbiased",
    "aipw_unbiased",
    "ipw_variance_bias",
    "aipw_variance_bias",
    "constant_effect_dispersion",
    "blocked_weights_equal",
    "blocked_weighted_expectation",
    "blocked_weighted_conservative",
    "block_aipw_unbiased",
];

fn vec_dev(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

fn missing(kind: CovarianceKind, instance: &Instance) -> Error {
    Error::Config(format!(
        "{kind:?} is not defined on instance `{}`",
        instance.name
    ))
}

/// Whether `C` applied to each step's (ρ-scaled when `scaled`) group mean is
/// the same for every step.
fn contrast_constant(instance: &Instance, scaled: bool) -> Result<bool> {
    let pop = &instance.population;
    let steps: Vec<Range<usize>> = match pop.blocks() {
        Some(b) if instance.design.is_block() => b.ranges().collect(),
        _ => (0..pop.num_units()).map(|u| u..u + 1).collect(),
    };
    let (means, rho) = group_means(pop, &steps);
    let values = means
        .iter()
        .zip(&rho)
        .map(|(m, r)| {
            let v: Vec<f64> = m.iter().map(|x| if scaled { r * x } else { *x }).collect();
            instance.contrast.apply(&v)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(values.windows(2).all(|w| vec_dev(&w[0], &w[1]) <= 1e-12))
}

/// Evaluate both sides of the named identity exactly on `instance`.
pub fn certify_identity(tag: &str, instance: &Instance) -> Result<Certification> {
    let c = &instance.contrast;
    let tol = CERTIFICATION_TOLERANCE;
    let pop = &instance.population;
    let tau = true_estimand(pop, c)?;
    let (max_deviation, passed, detail) = match tag {
        "ipw_unbiased" | "aipw_unbiased" | "block_aipw_unbiased" => {
            let model = if tag == "ipw_unbiased" {
                &OutcomeModelSpec::Zero
            } else {
                &instance.model
            };
            let r = enumerate(pop, &instance.design, model)?;
            let (mean, cov, v) = if tag == "ipw_unbiased" {
                let v = r
                    .v_ipw_closed_form
                    .clone()
                    .unwrap_or_else(|| r.v_ipw.clone());
                (&r.mean_ipw, &r.cov_ipw, v)
            } else {
                let v = r
                    .v_aipw_closed_form
                    .clone()
                    .unwrap_or_else(|| r.v_aipw.clone());
                (&r.mean_aipw, &r.cov_aipw, v)
            };
            let bias = vec_dev(&c.apply(mean)?, &tau);
            let t = r.num_steps as f64;
            let cov_dev = max_abs_diff(&c.project(cov)?, &(c.project(&v)? / t));
            // the conditional-covariance route must agree with the closed form
            let route_dev = match (&r.v_ipw_closed_form, &r.v_aipw_closed_form) {
                (Some(vi), Some(va)) => max_abs_diff(vi, &r.v_ipw).max(max_abs_diff(va, &r.v_aipw)),
                _ => 0.0,
            };
            let mut dev = bias.max(cov_dev).max(route_dev);
            let mut detail = format!(
                "paths {}, bias {bias:.3e}, covariance {cov_dev:.3e}, routes {route_dev:.3e}",
                r.num_paths
            );
            if tag == "block_aipw_unbiased" {
                let e = r
                    .expected_covariance(CovarianceKind::VhatAipw)
                    .ok_or_else(|| missing(CovarianceKind::VhatAipw, instance))?;
                let vb = max_abs_diff(&c.project(e)?, &c.project(&(&r.v_aipw + &r.s))?);
                dev = dev.max(vb);
                detail.push_str(&format!(", variance bias {vb:.3e}"));
            }
            (dev, dev <= tol, detail)
        }
        "ipw_variance_bias" | "aipw_variance_bias" => {
            let (model, kind) = if tag == "ipw_variance_bias" {
                (&OutcomeModelSpec::Zero, CovarianceKind::VhatIpw)
            } else {
                (&instance.model, CovarianceKind::VhatAipw)
            };
            let r = enumerate(pop, &instance.design, model)?;
            let e = r
                .expected_covariance(kind)
                .ok_or_else(|| missing(kind, instance))?;
            let v = if kind == CovarianceKind::VhatIpw {
                &r.v_ipw
            } else {
                &r.v_aipw
            };
            let dev = max_abs_diff(&c.project(e)?, &c.project(&(v + &r.s))?);
            (
                dev,
                dev <= tol,
                format!(
                    "paths {}, C S Cᵀ max {:.3e}",
                    r.num_paths,
                    max_abs(&c.project(&r.s)?)
                ),
            )
        }
        "constant_effect_dispersion" => {
            let css = c.project(&dispersion_matrix(pop, instance.design.is_block()))?;
            let constant = contrast_constant(instance, true)?;
            let size = max_abs(&css);
            let passed = if constant { size == 0.0 } else { size > 1e-6 };
            let dev = if constant { size } else { 0.0 };
            (
                dev,
                passed,
                format!("constant {constant}, max |C S Cᵀ| {size:.3e}"),
            )
        }
        "blocked_weights_equal" => {
            let blocks = pop.blocks().filter(|b| b.is_balanced()).ok_or_else(|| {
                Error::Config(format!("instance `{}` needs equal blocks", instance.name))
            })?;
            let t = blocks.num_blocks();
            let b = bt_weights(blocks.sizes())?;
            let exact = b.iter().all(|v| *v == 1.0 / (t - 1) as f64);
            let stat = |log: &ExperimentLog| -> Result<Vec<f64>> {
                let trace = pseudo_outcomes(log)?;
                let mut out = Vec::new();
                for (plain, weighted) in [
                    (CovarianceKind::VhatAipw, CovarianceKind::VhatAipwB),
                    (CovarianceKind::VtildeAipw, CovarianceKind::VtildeAipwB),
                ] {
                    let a = covariance_estimate(&trace, plain)?.matrix;
                    let w = covariance_estimate(&trace, weighted)?.matrix;
                    let same = a
                        .iter()
                        .zip(w.iter())
                        .all(|(x, y)| x.to_bits() == y.to_bits());
                    out.push(if same {
                        0.0
                    } else {
                        max_abs_diff(&a, &w).max(f64::MIN_POSITIVE)
                    });
                }
                Ok(out)
            };
            let m = enumerate_statistic(pop, &instance.design, &instance.model, &stat)?;
            let mut worst = 0.0f64;
            // any nonzero leaf value makes the mean nonzero since path probabilities are positive
            for v in &m.mean {
                worst = worst.max(*v);
            }
            (
                worst,
                exact && worst == 0.0,
                format!("paths {}, weights exact {exact}", m.num_paths),
            )
        }
        "blocked_weighted_expectation" | "blocked_weighted_conservative" => {
            let r = enumerate(pop, &instance.design, &instance.model)?;
            let e = r
                .expected_covariance(CovarianceKind::VhatAipwB)
                .ok_or_else(|| missing(CovarianceKind::VhatAipwB, instance))?;
            let disp = weighted_group_dispersion(pop)?;
            let t = r.num_steps as f64;
            if tag == "blocked_weighted_expectation" {
                let dev = max_abs_diff(e, &(&r.cov_aipw * t + &disp));
                (dev, dev <= tol, format!("paths {}", r.num_paths))
            } else {
                let excess = c.project(e)? - c.project(&r.cov_aipw)? * t;
                let target = c.project(&disp)?;
                let dev = max_abs_diff(&excess, &target);
                let (min_eig, _) = eigen_extremes(&excess);
                let constant = contrast_constant(instance, false)?;
                let size = max_abs(&excess);
                let branch = if constant { size <= tol } else { size > 1e-6 };
                (
                    dev,
                    dev <= tol && min_eig >= -tol && branch,
                    format!("paths {}, constant {constant}, excess {size:.3e}, min eigenvalue {min_eig:.3e}", r.num_paths),
                )
            }
        }
        other => return Err(Error::UnknownIdentity(other.to_string())),
    };
    Ok(Certification {
        identity: tag.to_string(),
        instance: instance.name.clone(),
        max_deviation,
        passed,
        detail,
    })
}

fn population(y1: &[f64], y2: &[f64], x: &[f64], blocks: Option<Vec<usize>>) -> FinitePopulation {
    let outcomes = y1.iter().zip(y2).map(|(a, b)| vec![*a, *b]).collect();
    let covariates = x.iter().map(|v| vec![*v]).collect();
    FinitePopulation::new(outcomes, covariates, blocks).expect("toy population is valid")
}

/// The shipped toy instances, keyed by name.
pub fn toy_instances() -> Vec<Instance> {
    use crate::designs::ExploreSchedule;
    let greedy = DesignSpec::EpsilonGreedy {
        warmup: 1,
        explore: ExploreSchedule::Constant { epsilon: 0.2 },
    };
    let y1 = [1.0, 2.5, -0.5];
    let srd = |accept_count, treated_per_block| DesignSpec::SequentialRerandomization {
        accept_count,
        treated_per_block,
    };
    // within-block effects vary but every block averages an effect of 1
    let x12: Vec<f64> = (0..12).map(|i| ((i * 7) % 12) as f64 / 4.0 - 1.0).collect();
    let base: Vec<f64> = x12
        .iter()
        .enumerate()
        .map(|(i, x)| 2.0 * x + (i % 3) as f64)
        .collect();
    let shifts = [0.5, 1.5, 1.0, 0.0, 2.0, 1.0, 1.0, 3.0, 0.0, -1.0, 1.0, 2.0];
    let treated: Vec<f64> = base.iter().zip(shifts).map(|(b, s)| b + s).collect();
    let mut perturbed = treated.clone();
    perturbed[4] += 0.75;
    vec![
        Instance {
            name: "greedy_t3".into(),
            population: population(&y1, &[2.0, 0.5, 3.0], &[0.0, 1.0, -1.0], None),
            design: greedy.clone(),
            model: OutcomeModelSpec::RunningMean,
            contrast: Contrast::difference(),
        },
        Instance {
            name: "greedy_t3_constant_effect".into(),
            population: population(&y1, &[2.5, 4.0, 1.0], &[0.0, 1.0, -1.0], None),
            design: greedy,
            model: OutcomeModelSpec::RunningMean,
            contrast: Contrast::difference(),
        },
        Instance {
            name: "srd_blocks_345".into(),
            population: population(&base, &treated, &x12, Some(vec![3, 4, 5])),
            design: srd(2, 2),
            model: OutcomeModelSpec::RunningMean,
            contrast: Contrast::difference(),
        },
        Instance {
            name: "srd_blocks_345_perturbed".into(),
            population: population(&base, &perturbed, &x12, Some(vec![3, 4, 5])),
            design: srd(2, 2),
            model: OutcomeModelSpec::RunningMean,
            contrast: Contrast::difference(),
        },
        Instance {
            name: "pairs_3x2".into(),
            population: population(
                &[0.5, -1.0, 2.0, 1.5, 0.0, 3.0],
                &[1.0, 0.5, 2.5, 4.0, -0.5, 2.0],
                &[0.3, -0.7, 1.1, 0.4, -1.2, 0.9],
                Some(vec![2, 2, 2]),
            ),
            design: DesignSpec::PairwiseSequential { bias: 0.75 },
            model: OutcomeModelSpec::RunningMean,
            contrast: Contrast::difference(),
        },
        Instance {
            name: "srd_two_pairs".into(),
            population: population(
                &[1.0, -0.5, 2.0, 0.25],
                &[2.0, 1.5, 1.0, 3.0],
                &[0.2, -0.4, 1.0, 0.6],
                Some(vec![2, 2]),
            ),
            design: srd(2, 1),
            model: OutcomeModelSpec::RunningMean,
            contrast: Contrast::difference(),
        },
    ]
}

/// The identity checks run by the certification suite: `(tag, instance name)`.
pub const SUITE: [(&str, &str); 14] = [
    ("ipw_unbiased", "greedy_t3"),
    ("aipw_unbiased", "greedy_t3"),
    ("ipw_variance_bias", "greedy_t3"),
    ("aipw_variance_bias", "greedy_t3"),
    ("constant_effect_dispersion", "greedy_t3"),
    ("constant_effect_dispersion", "greedy_t3_constant_effect"),
    ("aipw_variance_bias", "greedy_t3_constant_effect"),
    ("blocked_weights_equal", "pairs_3x2"),
    ("block_aipw_unbiased", "pairs_3x2"),
    ("blocked_weighted_expectation", "srd_blocks_345"),
    ("blocked_weighted_conservative", "srd_blocks_345"),
    ("blocked_weighted_conservative", "srd_blocks_345_perturbed"),
    ("block_aipw_unbiased", "srd_blocks_345"),
    ("block_aipw_unbiased", "srd_two_pairs"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub all_passed: bool,
    pub checks: Vec<Certification>,
}

pub fn run_certification_suite() -> Result<CertificationReport> {
    let instances = toy_instances();
    let checks = SUITE
        .iter()
        .map(|(tag, name)| {
            let inst = instances
                .iter()
                .find(|i| i.name == *name)
                .expect("suite names a shipped instance");
            certify_identity(tag, inst)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CertificationReport {
        all_passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(name: &str) -> Instance {
        toy_instances()
            .into_iter()
            .find(|i| i.name == name)
            .unwrap()
    }

    #[test]
    fn bernoulli_inverse_probabilities_are_constant() {
        let pop = toy("greedy_t3").population;
        let design = DesignSpec::Bernoulli {
            probs: vec![0.25, 0.75],
        };
        let r = enumerate(&pop, &design, &OutcomeModelSpec::Zero).unwrap();
        assert_eq!(r.num_paths, 8);
        assert!((r.total_probability - 1.0).abs() < 1e-12);
        for c in &r.conditions {
            assert_eq!(c.inverse_prob_variance, 0.0);
            assert_eq!(c.min_prob, 0.25);
        }
    }

    #[test]
    fn greedy_warmup_and_third_step() {
        let inst = toy("greedy_t3");
        let r = enumerate(&inst.population, &inst.design, &OutcomeModelSpec::Zero).unwrap();
        assert_eq!(r.conditions[0].min_prob, 0.5);
        assert!((r.conditions[1].min_prob - 0.2).abs() < 1e-15);
        // t = 3 sees four histories with probabilities 0.5·(0.8 or 0.2)
        // and leading arms fixed by Y_1 and Y_2: compare with a direct sum
        let v3 = r.conditions[2].inverse_prob_variance;
        assert!(v3 >= 0.0 && v3.is_finite());
    }

    #[test]
    fn unknown_tags_are_rejected() {
        assert!(matches!(
            certify_identity("no_such_identity", &toy("greedy_t3")),
            Err(Error::UnknownIdentity(_))
        ));
    }

    #[test]
    fn full_suite_passes() {
        let report = run_certification_suite().unwrap();
        for c in &report.checks {
            assert!(c.passed, "{c:?}");
        }
    }
}
