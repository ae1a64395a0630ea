//! The finite-population data model.
//!
//! Potential outcomes `Y_t(z)` and covariates `X_t` are fixed constants;
//! treatment assignment is the only source of randomness. Arms are indexed
//! from zero internally and from one in every file format.

mod csv_io;
mod dgp;
mod log;

pub use csv_io::{read_population_csv, write_population_csv};
pub use dgp::{generate_population, DgpSpec};
pub use log::{read_log_csv, write_log_csv, ExperimentLog, UnitRecord};

use std::ops::Range;

use crate::contrast::Contrast;
use crate::error::{Error, Result};

/// Ordered partition of the unit index range into contiguous groups.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStructure {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockStructure {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::InvalidPopulation("block list is empty".into()));
        }
        if let Some(g) = sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidPopulation(format!(
                "block {} has size zero",
                g + 1
            )));
        }
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for n in &sizes {
            acc += n;
            offsets.push(acc);
        }
        Ok(BlockStructure { sizes, offsets })
    }

    /// `n` blocks of size one.
    pub fn singletons(n: usize) -> Self {
        BlockStructure::new(vec![1; n]).expect("singletons are valid for n >= 1")
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn num_units(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn range(&self, block: usize) -> Range<usize> {
        self.offsets[block]..self.offsets[block + 1]
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.num_blocks()).map(|b| self.range(b))
    }

    pub fn is_balanced(&self) -> bool {
        self.sizes.windows(2).all(|w| w[0] == w[1])
    }
}

/// Fixed table of potential outcomes and covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct FinitePopulation {
    num_arms: usize,
    num_covariates: usize,
    outcomes: Vec<f64>,
    covariates: Vec<f64>,
    blocks: Option<BlockStructure>,
}

impl FinitePopulation {
    /// Build from row-major tables. `outcomes[t][z] = Y_t(z)`.
    pub fn new(
        outcomes: Vec<Vec<f64>>,
        covariates: Vec<Vec<f64>>,
        block_sizes: Option<Vec<usize>>,
    ) -> Result<Self> {
        let units = outcomes.len();
        if units == 0 {
            return Err(Error::InvalidPopulation(
                "population must contain at least one unit".into(),
            ));
        }
        let num_arms = outcomes[0].len();
        if num_arms < 2 {
            return Err(Error::InvalidPopulation(format!(
                "at least two arms required, got {num_arms}"
            )));
        }
        if covariates.len() != units {
            return Err(Error::InvalidPopulation(format!(
                "covariate rows ({}) must equal unit count ({units})",
                covariates.len()
            )));
        }
        let num_covariates = covariates[0].len();
        let mut flat_y = Vec::with_capacity(units * num_arms);
        for (t, row) in outcomes.iter().enumerate() {
            if row.len() != num_arms {
                return Err(Error::InvalidPopulation(format!(
                    "unit {} has {} potential outcomes, expected {num_arms}",
                    t + 1,
                    row.len()
                )));
            }
            if let Some(z) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidPopulation(format!(
                    "potential outcome Y_{}({}) is not finite",
                    t + 1,
                    z + 1
                )));
            }
            flat_y.extend_from_slice(row);
        }
        let mut flat_x = Vec::with_capacity(units * num_covariates);
        for (t, row) in covariates.iter().enumerate() {
            if row.len() != num_covariates {
                return Err(Error::InvalidPopulation(format!(
                    "unit {} has {} covariates, expected {num_covariates}",
                    t + 1,
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidPopulation(format!(
                    "unit {} has a non-finite covariate",
                    t + 1
                )));
            }
            flat_x.extend_from_slice(row);
        }
        let blocks = match block_sizes {
            Some(sizes) => {
                let b = BlockStructure::new(sizes)?;
                if b.num_units() != units {
                    return Err(Error::InvalidPopulation(format!(
                        "block sizes sum to {} but there are {units} units",
                        b.num_units()
                    )));
                }
                Some(b)
            }
            None => None,
        };
        Ok(FinitePopulation {
            num_arms,
            num_covariates,
            outcomes: flat_y,
            covariates: flat_x,
            blocks,
        })
    }

    pub fn num_units(&self) -> usize {
        self.outcomes.len() / self.num_arms
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn num_covariates(&self) -> usize {
        self.num_covariates
    }

    pub fn blocks(&self) -> Option<&BlockStructure> {
        self.blocks.as_ref()
    }

    pub fn outcome(&self, unit: usize, arm: usize) -> f64 {
        self.outcomes[unit * self.num_arms + arm]
    }

    /// `(Y_t(1), …, Y_t(K))`.
    pub fn outcomes(&self, unit: usize) -> &[f64] {
        &self.outcomes[unit * self.num_arms..(unit + 1) * self.num_arms]
    }

    pub fn covariates(&self, unit: usize) -> &[f64] {
        &self.covariates[unit * self.num_covariates..(unit + 1) * self.num_covariates]
    }

    /// `Ȳ(z) = T⁻¹ Σ_t Y_t(z)` for every arm.
    pub fn mean_outcomes(&self) -> Vec<f64> {
        let t = self.num_units() as f64;
        (0..self.num_arms)
            .map(|z| {
                (0..self.num_units())
                    .map(|u| self.outcome(u, z))
                    .sum::<f64>()
                    / t
            })
            .collect()
    }

    /// A copy with one potential outcome replaced.
    pub fn with_outcome(&self, unit: usize, arm: usize, value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::InvalidPopulation("outcome must be finite".into()));
        }
        let mut out = self.clone();
        out.outcomes[unit * self.num_arms + arm] = value;
        Ok(out)
    }

    /// Replace (or drop) the block structure.
    pub fn with_blocks(&self, block_sizes: Option<Vec<usize>>) -> Result<Self> {
        let rows_y = (0..self.num_units())
            .map(|u| self.outcomes(u).to_vec())
            .collect();
        let rows_x = (0..self.num_units())
            .map(|u| self.covariates(u).to_vec())
            .collect();
        FinitePopulation::new(rows_y, rows_x, block_sizes)
    }
}

/// Target of inference: a contrast together with its finite-population value.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimand {
    pub contrast: Contrast,
    pub truth: Vec<f64>,
}

impl Estimand {
    pub fn new(population: &FinitePopulation, contrast: Contrast) -> Result<Self> {
        let truth = true_estimand(population, &contrast)?;
        Ok(Estimand { contrast, truth })
    }
}

/// `τ_C = C Ȳ`.
pub fn true_estimand(population: &FinitePopulation, contrast: &Contrast) -> Result<Vec<f64>> {
    contrast.apply(&population.mean_outcomes())
}
