//! Monte Carlo replication of simulation studies.
//!
//! A study fixes one population, draws `replications` assignment logs from
//! one design and evaluates every strategy on each log, so strategies are
//! compared on identical assignments. Replications run on a worker pool and
//! are merged in replication order, which makes results independent of the
//! pool size.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrast::Contrast;
use crate::designs::{simulate_experiment, DesignSpec};
use crate::error::{Error, Result};
use crate::estimators::chi2::chi2_quantile;
use crate::estimators::{
    confidence_set, covariance_estimate, point_estimate, pseudo_outcomes, wald_set, CovarianceKind,
};
use crate::outcome_models::{
    all_units_estimate, attach_predictions, crossfit_estimate, OutcomeModelSpec,
};
use crate::population::{
    generate_population, read_population_csv, true_estimand, DgpSpec, ExperimentLog,
    FinitePopulation, UnitRecord,
};
use crate::rng::replication_rng;

/// Where a study's fixed population comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSource {
    Generate { dgp: DgpSpec, seed: u64 },
    Csv { path: PathBuf },
}

impl PopulationSource {
    pub fn load(&self) -> Result<FinitePopulation> {
        match self {
            PopulationSource::Generate { dgp, seed } => generate_population(dgp, *seed),
            PopulationSource::Csv { path } => read_population_csv(path),
        }
    }
}

/// Nonsequential comparators that only exist in the harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ComparatorDesign {
    /// Exactly `treated` units (default half) receive the second arm.
    CompleteRandomization {
        #[serde(default)]
        treated: Option<usize>,
    },
    /// Complete randomization inside each block of the population, with
    /// `treated_per_block` units (default half) given the second arm.
    BlockedCompleteRandomization {
        #[serde(default)]
        treated_per_block: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StudyDesign {
    Sequential(DesignSpec),
    Comparator(ComparatorDesign),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    /// IPW with the `V̂_ipw` covariance.
    Ipw {
        #[serde(default)]
        name: Option<String>,
    },
    /// Arm sample means with the Welch variance.
    Sm {
        #[serde(default)]
        name: Option<String>,
    },
    Aipw {
        #[serde(default)]
        name: Option<String>,
        model: OutcomeModelSpec,
        #[serde(default = "default_variance")]
        variance: CovarianceKind,
    },
    /// Adjustment with a model fitted on all units.
    All {
        #[serde(default)]
        name: Option<String>,
        model: OutcomeModelSpec,
    },
    /// Cross-fitted adjustment. With `bonferroni` each fold's interval is
    /// built at level `α / G` and the endpoints are averaged with the fold
    /// weights; otherwise the combined variance `Σ w_g² Var_g` is used.
    Cf {
        #[serde(default)]
        name: Option<String>,
        folds: usize,
        model: OutcomeModelSpec,
        #[serde(default)]
        bonferroni: bool,
    },
}

fn default_variance() -> CovarianceKind {
    CovarianceKind::VtildeAipw
}

fn default_alpha() -> f64 {
    0.05
}

fn default_parallelism() -> usize {
    1
}

impl StrategySpec {
    pub fn name(&self) -> String {
        match self {
            StrategySpec::Ipw { name } => name.clone().unwrap_or_else(|| "ipw".into()),
            StrategySpec::Sm { name } => name.clone().unwrap_or_else(|| "sm".into()),
            StrategySpec::Aipw { name, variance, .. } => name.clone().unwrap_or_else(|| {
                let tag = serde_json::to_value(variance).expect("enum serializes");
                format!("aipw_{}", tag.as_str().unwrap_or("v"))
            }),
            StrategySpec::All { name, .. } => name.clone().unwrap_or_else(|| "all".into()),
            StrategySpec::Cf {
                name, bonferroni, ..
            } => name.clone().unwrap_or_else(|| {
                if *bonferroni {
                    "cf1".into()
                } else {
                    "cf2".into()
                }
            }),
        }
    }

    fn model(&self) -> Option<&OutcomeModelSpec> {
        match self {
            StrategySpec::Aipw { model, .. } => Some(model),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub population: PopulationSource,
    pub design: StudyDesign,
    pub strategies: Vec<StrategySpec>,
    #[serde(default = "Contrast::difference")]
    pub contrast: Contrast,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

/// Quick-profile caps.
pub const QUICK_UNITS: usize = 500;
pub const QUICK_REPLICATIONS: usize = 300;

impl StudySpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("at least one strategy is required".into()));
        }
        if self.parallelism == 0 {
            return Err(Error::Config("parallelism must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha {} is not in (0, 1)",
                self.alpha
            )));
        }
        let mut names: Vec<String> = self.strategies.iter().map(StrategySpec::name).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Config(format!("duplicate strategy name `{}`", w[0])));
        }
        for s in &self.strategies {
            if let StrategySpec::Cf {
                bonferroni: true, ..
            } = s
            {
                if self.contrast.num_estimands() != 1 {
                    return Err(Error::Config(
                        "the Bonferroni cross-fit interval needs a single estimand".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Shrink to the quick profile: at most [`QUICK_UNITS`] generated units
    /// and [`QUICK_REPLICATIONS`] replications.
    pub fn quick(mut self) -> Self {
        self.replications = self.replications.min(QUICK_REPLICATIONS);
        if let PopulationSource::Generate { dgp, .. } = &mut self.population {
            match dgp {
                DgpSpec::Linear { units, .. } | DgpSpec::Trend { units } => {
                    *units = (*units).min(QUICK_UNITS)
                }
                DgpSpec::BlockedNull { blocks, block_size } => {
                    *blocks = (*blocks).min((QUICK_UNITS / *block_size).max(2))
                }
            }
        }
        self
    }
}

/// One strategy's result in one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub tau_hat: Vec<f64>,
    pub covered: bool,
    /// Interval length, or the mean shadow-interval length when `Q > 1`.
    pub length: f64,
    /// Hash of the assignment sequence the strategy was evaluated on.
    pub z_hash: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyResult {
    pub name: String,
    pub replications: usize,
    pub bias: Vec<f64>,
    pub mse: Vec<f64>,
    pub rmse: Vec<f64>,
    pub skewness: Vec<f64>,
    pub coverage: f64,
    pub ci_length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub truth: Vec<f64>,
    pub replications: usize,
    pub strategies: Vec<StrategyResult>,
    /// `raw[r][s]` is strategy `s` in replication `r`.
    #[serde(skip)]
    pub raw: Vec<Vec<StrategyOutcome>>,
}

impl StudyResult {
    pub fn strategy(&self, name: &str) -> Option<&StrategyResult> {
        self.strategies.iter().find(|s| s.name == name)
    }
}

pub const METRICS: [&str; 6] = ["bias", "mse", "rmse", "skewness", "coverage", "ci_length"];

pub fn z_hash(log: &ExperimentLog) -> u64 {
    let mut h = DefaultHasher::new();
    log.arms().hash(&mut h);
    h.finish()
}

fn check_two_arms(population: &FinitePopulation) -> Result<()> {
    if population.num_arms() != 2 {
        return Err(Error::InvalidDesign(
            "complete randomization needs two arms".into(),
        ));
    }
    Ok(())
}

/// Treat `treated` of the units in `range`, chosen uniformly.
fn randomize_range<R: Rng + ?Sized>(
    population: &FinitePopulation,
    range: std::ops::Range<usize>,
    treated: Option<usize>,
    rng: &mut R,
    records: &mut Vec<UnitRecord>,
) -> Result<()> {
    let n = range.len();
    let n1 = treated.unwrap_or(n / 2);
    if n1 == 0 || n1 >= n {
        return Err(Error::InvalidDesign(format!(
            "complete randomization needs 0 < treated < {n}, got {n1}"
        )));
    }
    let p = n1 as f64 / n as f64;
    let mut arms = vec![0usize; n];
    for i in sample(rng, n, n1) {
        arms[i] = 1;
    }
    for (u, z) in range.zip(arms) {
        records.push(UnitRecord::new(
            population.covariates(u).to_vec(),
            z,
            vec![1.0 - p, p],
            population.outcome(u, z),
        ));
    }
    Ok(())
}

fn complete_randomization<R: Rng + ?Sized>(
    population: &FinitePopulation,
    treated: Option<usize>,
    rng: &mut R,
) -> Result<ExperimentLog> {
    check_two_arms(population)?;
    let mut records = Vec::with_capacity(population.num_units());
    randomize_range(
        population,
        0..population.num_units(),
        treated,
        rng,
        &mut records,
    )?;
    ExperimentLog::new(2, records, None)
}

fn blocked_complete_randomization<R: Rng + ?Sized>(
    population: &FinitePopulation,
    treated_per_block: Option<usize>,
    rng: &mut R,
) -> Result<ExperimentLog> {
    check_two_arms(population)?;
    let blocks = population.blocks().ok_or_else(|| {
        Error::InvalidDesign("blocked complete randomization needs a blocked population".into())
    })?;
    let mut records = Vec::with_capacity(population.num_units());
    for range in blocks.ranges() {
        randomize_range(population, range, treated_per_block, rng, &mut records)?;
    }
    ExperimentLog::new(2, records, Some(blocks.clone()))
}

pub fn draw_log<R: Rng + ?Sized>(
    population: &FinitePopulation,
    design: &StudyDesign,
    rng: &mut R,
) -> Result<ExperimentLog> {
    match design {
        StudyDesign::Sequential(d) => simulate_experiment(population, d, rng),
        StudyDesign::Comparator(ComparatorDesign::CompleteRandomization { treated }) => {
            complete_randomization(population, *treated, rng)
        }
        StudyDesign::Comparator(ComparatorDesign::BlockedCompleteRandomization {
            treated_per_block,
        }) => blocked_complete_randomization(population, *treated_per_block, rng),
    }
}

fn sample_means(
    log: &ExperimentLog,
    contrast: &Contrast,
) -> Result<(Vec<f64>, nalgebra::DMatrix<f64>)> {
    let k = log.num_arms();
    let mut means = Vec::with_capacity(k);
    let mut var = nalgebra::DMatrix::zeros(k, k);
    for z in 0..k {
        let ys: Vec<f64> = log
            .records()
            .iter()
            .filter(|r| r.arm == z)
            .map(|r| r.outcome)
            .collect();
        if ys.len() < 2 {
            return Err(Error::SparseArm {
                arm: z + 1,
                count: ys.len(),
                needed: 2,
            });
        }
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let s2 = ys.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n - 1.0);
        means.push(mean);
        var[(z, z)] = s2 / n;
    }
    Ok((contrast.apply(&means)?, contrast.project(&var)?))
}

struct Replicate<'a> {
    population: &'a FinitePopulation,
    contrast: &'a Contrast,
    alpha: f64,
    truth: &'a [f64],
}

impl Replicate<'_> {
    fn evaluate(
        &self,
        strategy: &StrategySpec,
        log: &ExperimentLog,
        adjusted: &[(OutcomeModelSpec, ExperimentLog)],
    ) -> Result<StrategyOutcome> {
        let (c, alpha) = (self.contrast, self.alpha);
        let set = match strategy {
            StrategySpec::Ipw { .. } => {
                let trace = pseudo_outcomes(log)?;
                let tau = point_estimate(&trace, crate::estimators::Estimator::Ipw, c)?;
                let v = covariance_estimate(&trace, CovarianceKind::VhatIpw)?;
                confidence_set(&tau, &v, c, alpha, trace.num_steps())?
            }
            StrategySpec::Aipw {
                model, variance, ..
            } => {
                let log = &adjusted
                    .iter()
                    .find(|(m, _)| m == model)
                    .expect("every model is attached before evaluation")
                    .1;
                let trace = pseudo_outcomes(log)?;
                let tau = point_estimate(&trace, variance.estimator(), c)?;
                let v = covariance_estimate(&trace, *variance)?;
                confidence_set(&tau, &v, c, alpha, trace.num_steps())?
            }
            StrategySpec::Sm { .. } => {
                let (tau, cov) = sample_means(log, c)?;
                wald_set(&tau, cov, alpha)?
            }
            StrategySpec::All { model, .. } => {
                let est = all_units_estimate(log, model, c)?;
                wald_set(&est.tau_hat, est.cov, alpha)?
            }
            StrategySpec::Cf {
                folds,
                model,
                bonferroni,
                ..
            } => {
                let est = crossfit_estimate(log, *folds, model, c)?;
                if *bonferroni {
                    let level = alpha / *folds as f64;
                    let z = chi2_quantile(1, 1.0 - level)?.sqrt();
                    let (mut lo, mut hi) = (0.0, 0.0);
                    for f in &est.folds {
                        let half = z * f.estimate.cov[(0, 0)].sqrt();
                        lo += f.weight * (f.estimate.tau_hat[0] - half);
                        hi += f.weight * (f.estimate.tau_hat[0] + half);
                    }
                    return Ok(StrategyOutcome {
                        tau_hat: est.combined.tau_hat,
                        covered: lo <= self.truth[0] && self.truth[0] <= hi,
                        length: hi - lo,
                        z_hash: z_hash(log),
                    });
                }
                wald_set(&est.combined.tau_hat, est.combined.cov, alpha)?
            }
        };
        Ok(StrategyOutcome {
            tau_hat: set.center().to_vec(),
            covered: set.contains(self.truth),
            length: set.mean_length(),
            z_hash: z_hash(log),
        })
    }

    fn run(&self, spec: &StudySpec, replication: usize) -> Result<Vec<StrategyOutcome>> {
        let mut rng = replication_rng(spec.base_seed, replication);
        let log = draw_log(self.population, &spec.design, &mut rng)?;
        let mut adjusted: Vec<(OutcomeModelSpec, ExperimentLog)> = Vec::new();
        for m in spec.strategies.iter().filter_map(StrategySpec::model) {
            if !adjusted.iter().any(|(n, _)| n == m) {
                adjusted.push((
                    m.clone(),
                    attach_predictions(&log, m, Some(self.population))?,
                ));
            }
        }
        spec.strategies
            .iter()
            .map(|s| self.evaluate(s, &log, &adjusted))
            .collect()
    }
}

fn summarize(name: String, truth: &[f64], outcomes: &[&StrategyOutcome]) -> StrategyResult {
    let r = outcomes.len() as f64;
    let q = truth.len();
    let mut bias = vec![0.0; q];
    let mut mse = vec![0.0; q];
    let mut skewness = vec![0.0; q];
    for j in 0..q {
        let d: Vec<f64> = outcomes.iter().map(|o| o.tau_hat[j] - truth[j]).collect();
        let mean = d.iter().sum::<f64>() / r;
        bias[j] = mean;
        mse[j] = d.iter().map(|x| x * x).sum::<f64>() / r;
        let m2 = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / r;
        let m3 = d.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / r;
        skewness[j] = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    }
    StrategyResult {
        name,
        replications: outcomes.len(),
        rmse: mse.iter().map(|v| v.sqrt()).collect(),
        bias,
        mse,
        skewness,
        coverage: outcomes.iter().filter(|o| o.covered).count() as f64 / r,
        ci_length: outcomes.iter().map(|o| o.length).sum::<f64>() / r,
    }
}

/// Run every replication of a study.
pub fn run_study(spec: &StudySpec) -> Result<StudyResult> {
    spec.validate()?;
    let population = spec.population.load()?;
    run_study_on(spec, &population)
}

/// [`run_study`] on an already loaded population.
pub fn run_study_on(spec: &StudySpec, population: &FinitePopulation) -> Result<StudyResult> {
    spec.validate()?;
    let truth = true_estimand(population, &spec.contrast)?;
    let rep = Replicate {
        population,
        contrast: &spec.contrast,
        alpha: spec.alpha,
        truth: &truth,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<Vec<StrategyOutcome>>> = pool.install(|| {
        (0..spec.replications)
            .into_par_iter()
            .map(|r| rep.run(spec, r))
            .collect()
    });
    let mut raw = Vec::with_capacity(results.len());
    for (r, res) in results.into_iter().enumerate() {
        raw.push(res.map_err(|e| Error::Replication {
            replication: r,
            seed: spec.base_seed,
            source: Box::new(e),
        })?);
    }
    let strategies = spec
        .strategies
        .iter()
        .enumerate()
        .map(|(s, st)| {
            let outcomes: Vec<&StrategyOutcome> = raw.iter().map(|row| &row[s]).collect();
            summarize(st.name(), &truth, &outcomes)
        })
        .collect();
    Ok(StudyResult {
        truth,
        replications: spec.replications,
        strategies,
        raw,
    })
}

/// Sequential rerandomization against complete randomization on one
/// blocked population.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrdComparisonSpec {
    pub population: PopulationSource,
    pub srd: DesignSpec,
    #[serde(default)]
    pub crd_treated: Option<usize>,
    #[serde(default = "Contrast::difference")]
    pub contrast: Contrast,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    pub replications: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrdComparison {
    /// IPW with the block covariance under the rerandomized design.
    pub srd: StrategyResult,
    /// Difference in means with the Neyman interval under complete randomization.
    pub crd: StrategyResult,
    /// `1 − RMSE_srd / RMSE_crd`.
    pub rmse_reduction: f64,
    /// `1 − length_srd / length_crd`.
    pub length_reduction: f64,
    #[serde(skip)]
    truth: Vec<f64>,
    #[serde(skip)]
    raw: Vec<Vec<StrategyOutcome>>,
}

impl SrdComparison {
    /// Both arms as one two-strategy study, `srd_ipw` then `crd_sm`.
    pub fn combined(&self) -> StudyResult {
        StudyResult {
            truth: self.truth.clone(),
            replications: self.srd.replications,
            strategies: vec![self.srd.clone(), self.crd.clone()],
            raw: self.raw.clone(),
        }
    }
}

pub fn run_srd_comparison(spec: &SrdComparisonSpec) -> Result<SrdComparison> {
    if !spec.srd.is_block() {
        return Err(Error::Config(
            "the rerandomized arm needs a block design".into(),
        ));
    }
    let population = spec.population.load()?;
    let study = |design: StudyDesign, strategy: StrategySpec| StudySpec {
        population: spec.population.clone(),
        design,
        strategies: vec![strategy],
        contrast: spec.contrast.clone(),
        alpha: spec.alpha,
        replications: spec.replications,
        base_seed: spec.base_seed,
        parallelism: spec.parallelism,
    };
    let srd = run_study_on(
        &study(
            StudyDesign::Sequential(spec.srd.clone()),
            StrategySpec::Ipw {
                name: Some("srd_ipw".into()),
            },
        ),
        &population,
    )?;
    let crd = run_study_on(
        &study(
            StudyDesign::Comparator(ComparatorDesign::CompleteRandomization {
                treated: spec.crd_treated,
            }),
            StrategySpec::Sm {
                name: Some("crd_sm".into()),
            },
        ),
        &population,
    )?;
    let raw = srd
        .raw
        .iter()
        .zip(&crd.raw)
        .map(|(a, b)| vec![a[0].clone(), b[0].clone()])
        .collect();
    let (s, c) = (srd.strategies[0].clone(), crd.strategies[0].clone());
    Ok(SrdComparison {
        rmse_reduction: 1.0 - s.rmse[0] / c.rmse[0],
        length_reduction: 1.0 - s.ci_length / c.ci_length,
        srd: s,
        crd: c,
        truth: srd.truth,
        raw,
    })
}

fn metric_values(s: &StrategyResult, metric: &str) -> Vec<f64> {
    match metric {
        "bias" => s.bias.clone(),
        "mse" => s.mse.clone(),
        "rmse" => s.rmse.clone(),
        "skewness" => s.skewness.clone(),
        "coverage" => vec![s.coverage],
        "ci_length" => vec![s.ci_length],
        _ => unreachable!("metric list is fixed"),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

/// `summary.csv` with columns `strategy, metric, value`. Vector metrics of a
/// multi-row contrast are written as `metric[q]`.
pub fn summarize_to_csv(result: &StudyResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["strategy", "metric", "value"])
        .map_err(|e| csv_err(path, e))?;
    for s in &result.strategies {
        for metric in METRICS {
            let values = metric_values(s, metric);
            for (q, v) in values.iter().enumerate() {
                let label = if values.len() == 1 {
                    metric.to_string()
                } else {
                    format!("{metric}[{}]", q + 1)
                };
                w.write_record([s.name.as_str(), label.as_str(), &format!("{v:.12e}")])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// `deviations.csv` with columns `strategy, replication, deviation` (one row
/// per coordinate for multi-row contrasts).
pub fn emit_plot_data(result: &StudyResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["strategy", "replication", "deviation"])
        .map_err(|e| csv_err(path, e))?;
    for (s, st) in result.strategies.iter().enumerate() {
        for (r, row) in result.raw.iter().enumerate() {
            for (q, t) in row[s].tau_hat.iter().enumerate() {
                let d = t - result.truth[q];
                w.write_record([st.name.as_str(), &(r + 1).to_string(), &format!("{d:.12e}")])
                    .map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush()
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Write `summary.csv`, `deviations.csv` and `report.json` into `dir`.
pub fn write_outputs(result: &StudyResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    summarize_to_csv(result, &dir.join("summary.csv"))?;
    emit_plot_data(result, &dir.join("deviations.csv"))?;
    let report = dir.join("report.json");
    let json = serde_json::to_string_pretty(result).expect("study results serialize");
    std::fs::write(&report, json + "\n").map_err(|e| Error::io(report.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> StudySpec {
        serde_json::from_str(
            r#"{
                "population": {"generate": {"dgp": {"kind": "linear", "units": 60}, "seed": 3}},
                "design": {"kind": "bernoulli", "probs": [0.5, 0.5]},
                "strategies": [
                    {"kind": "ipw"},
                    {"kind": "sm"},
                    {"kind": "aipw", "name": "aipw1", "model": {"kind": "online_least_squares"}, "variance": "vhat_aipw"},
                    {"kind": "aipw", "name": "aipw2", "model": {"kind": "online_least_squares"}},
                    {"kind": "all", "model": {"kind": "online_least_squares"}},
                    {"kind": "cf", "folds": 2, "model": {"kind": "online_least_squares"}, "bonferroni": true},
                    {"kind": "cf", "folds": 2, "model": {"kind": "online_least_squares"}}
                ],
                "replications": 20,
                "base_seed": 11
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn config_defaults() {
        let spec = small_spec();
        assert_eq!(spec.alpha, 0.05);
        assert_eq!(spec.parallelism, 1);
        assert_eq!(spec.contrast, Contrast::difference());
        let names: Vec<String> = spec.strategies.iter().map(StrategySpec::name).collect();
        assert_eq!(names, ["ipw", "sm", "aipw1", "aipw2", "all", "cf1", "cf2"]);
    }

    #[test]
    fn zero_replications_rejected() {
        let mut spec = small_spec();
        spec.replications = 0;
        assert!(run_study(&spec).is_err());
    }

    #[test]
    fn outputs_have_documented_shape() {
        let spec = small_spec();
        let result = run_study(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_outputs(&result, dir.path()).unwrap();
        let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        assert_eq!(
            summary.lines().count() - 1,
            spec.strategies.len() * METRICS.len()
        );
        let dev = std::fs::read_to_string(dir.path().join("deviations.csv")).unwrap();
        assert_eq!(
            dev.lines().count() - 1,
            spec.strategies.len() * spec.replications
        );
        for s in &result.strategies {
            assert!((0.0..=1.0).contains(&s.coverage));
            assert!(s.mse[0] >= s.bias[0] * s.bias[0] * (1.0 - 1e-9));
        }
    }

    #[test]
    fn complete_randomization_treats_exactly_half() {
        let pop = generate_population(
            &DgpSpec::BlockedNull {
                blocks: 4,
                block_size: 8,
            },
            1,
        )
        .unwrap();
        let mut rng = replication_rng(5, 0);
        let log = complete_randomization(&pop, None, &mut rng).unwrap();
        assert_eq!(log.arms().iter().filter(|z| **z == 1).count(), 16);
        assert!(log.blocks().is_none());
        let log = blocked_complete_randomization(&pop, Some(3), &mut rng).unwrap();
        for range in pop.blocks().unwrap().ranges() {
            assert_eq!(log.arms()[range].iter().filter(|z| **z == 1).count(), 3);
        }
    }

    #[test]
    fn quick_profile_caps_sizes() {
        let spec = small_spec();
        let mut big = spec.clone();
        big.replications = 1000;
        if let PopulationSource::Generate {
            dgp: DgpSpec::Linear { units, .. },
            ..
        } = &mut big.population
        {
            *units = 2000;
        }
        let q = big.quick();
        assert_eq!(q.replications, QUICK_REPLICATIONS);
        assert!(matches!(
            q.population,
            PopulationSource::Generate {
                dgp: DgpSpec::Linear {
                    units: QUICK_UNITS,
                    ..
                },
                ..
            }
        ));
    }
}
