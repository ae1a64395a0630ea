use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::csv_io::{
    block_sizes, check_leading, csv_error, fmt, indexed_run, parse_block, parse_number, read_table,
};
use super::BlockStructure;
use crate::error::{Error, Result};

/// Tolerance on `Σ_z e_t(z) = 1` for stored probabilities. Looser than the
/// design-side check so externally produced logs with rounded
/// probabilities still load.
pub const LOG_SUM_TOLERANCE: f64 = 1e-9;

/// One unit of an experiment: covariates, the realized arm (0-based), the
/// assignment probabilities in force when it was drawn, the observed
/// outcome and the outcome-model predictions `m̂_t(·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub covariates: Vec<f64>,
    pub arm: usize,
    pub probs: Vec<f64>,
    pub outcome: f64,
    pub predictions: Vec<f64>,
}

impl UnitRecord {
    /// A record with zero predictions.
    pub fn new(covariates: Vec<f64>, arm: usize, probs: Vec<f64>, outcome: f64) -> Self {
        let k = probs.len();
        UnitRecord {
            covariates,
            arm,
            probs,
            outcome,
            predictions: vec![0.0; k],
        }
    }
}

/// The realized record of one run of an experiment.
///
/// For block designs `probs` holds each unit's marginal `e_{ti}(z)` and the
/// block structure says how units group.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentLog {
    num_arms: usize,
    num_covariates: usize,
    records: Vec<UnitRecord>,
    blocks: Option<BlockStructure>,
}

impl ExperimentLog {
    pub fn new(
        num_arms: usize,
        records: Vec<UnitRecord>,
        blocks: Option<BlockStructure>,
    ) -> Result<Self> {
        if num_arms < 2 {
            return Err(Error::InvalidLog(format!(
                "at least two arms required, got {num_arms}"
            )));
        }
        if records.is_empty() {
            return Err(Error::InvalidLog(
                "log must contain at least one unit".into(),
            ));
        }
        let num_covariates = records[0].covariates.len();
        for (t, r) in records.iter().enumerate() {
            validate_record(t, r, num_arms, num_covariates)?;
        }
        if let Some(b) = &blocks {
            if b.num_units() != records.len() {
                return Err(Error::InvalidLog(format!(
                    "block sizes sum to {} but the log has {} units",
                    b.num_units(),
                    records.len()
                )));
            }
        }
        Ok(ExperimentLog {
            num_arms,
            num_covariates,
            records,
            blocks,
        })
    }

    pub fn num_units(&self) -> usize {
        self.records.len()
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn num_covariates(&self) -> usize {
        self.num_covariates
    }

    pub fn records(&self) -> &[UnitRecord] {
        &self.records
    }

    pub fn blocks(&self) -> Option<&BlockStructure> {
        self.blocks.as_ref()
    }

    /// Realized arms in unit order.
    pub fn arms(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.arm).collect()
    }

    /// A copy with `predictions[t]` as `m̂_t(·)`.
    pub fn with_predictions(&self, predictions: Vec<Vec<f64>>) -> Result<Self> {
        if predictions.len() != self.records.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} prediction rows for {} units",
                predictions.len(),
                self.records.len()
            )));
        }
        let mut out = self.clone();
        for (t, (r, m)) in out.records.iter_mut().zip(predictions).enumerate() {
            if m.len() != self.num_arms || m.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidLog(format!(
                    "unit {}: predictions must be {} finite values",
                    t + 1,
                    self.num_arms
                )));
            }
            r.predictions = m;
        }
        Ok(out)
    }

    /// Drop the block structure, keeping per-unit records.
    pub fn without_blocks(&self) -> Self {
        let mut out = self.clone();
        out.blocks = None;
        out
    }
}

fn validate_record(t: usize, r: &UnitRecord, k: usize, j: usize) -> Result<()> {
    let unit = t + 1;
    if r.covariates.len() != j {
        return Err(Error::InvalidLog(format!(
            "unit {unit} has {} covariates, expected {j}",
            r.covariates.len()
        )));
    }
    if r.covariates.iter().any(|v| !v.is_finite()) || !r.outcome.is_finite() {
        return Err(Error::InvalidLog(format!(
            "unit {unit} has a non-finite value"
        )));
    }
    if r.arm >= k {
        return Err(Error::InvalidLog(format!(
            "unit {unit} assigned arm {} but there are {k} arms",
            r.arm + 1
        )));
    }
    if r.probs.len() != k || r.predictions.len() != k {
        return Err(Error::InvalidLog(format!(
            "unit {unit} must carry {k} probabilities and {k} predictions"
        )));
    }
    if r.predictions.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidLog(format!(
            "unit {unit} has a non-finite prediction"
        )));
    }
    for (z, &e) in r.probs.iter().enumerate() {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::InvalidProbability {
                unit,
                arm: z + 1,
                value: e,
            });
        }
    }
    let sum: f64 = r.probs.iter().sum();
    if (sum - 1.0).abs() > LOG_SUM_TOLERANCE {
        return Err(Error::InvalidLog(format!(
            "unit {unit}: probabilities sum to {sum}"
        )));
    }
    Ok(())
}

/// Read a log from `unit[,block],x1..xJ,z,e1..eK,y[,m1..mK]` CSV.
///
/// Arms are 1-based in the file. Missing prediction columns mean `m̂ ≡ 0`.
pub fn read_log_csv(path: impl AsRef<Path>) -> Result<ExperimentLog> {
    let path = path.as_ref();
    let (columns, rows) = read_table(path)?;
    let header = check_leading(path, &columns)?;
    let x_start = 1 + usize::from(header.has_block);
    let j = indexed_run(&columns, x_start, "x");
    let z_col = x_start + j;
    if columns.get(z_col).map(String::as_str) != Some("z") {
        return Err(csv_error(
            path,
            1,
            "expected column `z` after the covariates",
        ));
    }
    let k = indexed_run(&columns, z_col + 1, "e");
    let y_col = z_col + 1 + k;
    if columns.get(y_col).map(String::as_str) != Some("y") {
        return Err(csv_error(path, 1, "expected column `y` after e1..eK"));
    }
    let m = indexed_run(&columns, y_col + 1, "m");
    if m != 0 && m != k {
        return Err(csv_error(
            path,
            1,
            format!("found {m} prediction columns for {k} arms"),
        ));
    }
    if y_col + 1 + m != columns.len() {
        return Err(csv_error(
            path,
            1,
            format!("unexpected column `{}`", columns[y_col + 1 + m]),
        ));
    }
    if k < 2 {
        return Err(csv_error(path, 1, "need at least two probability columns"));
    }
    if rows.is_empty() {
        return Err(Error::InvalidLog(
            "log must contain at least one unit".into(),
        ));
    }
    let mut records = Vec::with_capacity(rows.len());
    let mut labels = Vec::new();
    for (line, cells) in &rows {
        let line = *line;
        if cells.len() != columns.len() {
            return Err(csv_error(
                path,
                line,
                format!(
                    "row has {} fields, header has {}",
                    cells.len(),
                    columns.len()
                ),
            ));
        }
        if header.has_block {
            labels.push((line, parse_block(path, line, &cells[1])?));
        }
        let num = |c: usize| parse_number(path, line, &columns[c], &cells[c]);
        let covariates = (x_start..z_col).map(num).collect::<Result<Vec<_>>>()?;
        let z: usize = cells[z_col]
            .parse()
            .ok()
            .filter(|z| (1..=k).contains(z))
            .ok_or_else(|| {
                csv_error(
                    path,
                    line,
                    format!("arm `{}` is not in 1..{k}", cells[z_col]),
                )
            })?;
        let probs = (z_col + 1..y_col).map(num).collect::<Result<Vec<_>>>()?;
        let outcome = num(y_col)?;
        let predictions = if m == 0 {
            vec![0.0; k]
        } else {
            (y_col + 1..y_col + 1 + m)
                .map(num)
                .collect::<Result<Vec<_>>>()?
        };
        records.push(UnitRecord {
            covariates,
            arm: z - 1,
            probs,
            outcome,
            predictions,
        });
    }
    let blocks = if header.has_block {
        Some(BlockStructure::new(block_sizes(path, &labels)?)?)
    } else {
        None
    };
    ExperimentLog::new(k, records, blocks)
}

pub fn write_log_csv(log: &ExperimentLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = BufWriter::new(file);
    let k = log.num_arms();
    let mut header = vec!["unit".to_string()];
    if log.blocks().is_some() {
        header.push("block".into());
    }
    header.extend((1..=log.num_covariates()).map(|j| format!("x{j}")));
    header.push("z".into());
    header.extend((1..=k).map(|z| format!("e{z}")));
    header.push("y".into());
    header.extend((1..=k).map(|z| format!("m{z}")));
    let mut labels = Vec::new();
    if let Some(b) = log.blocks() {
        for (g, n) in b.sizes().iter().enumerate() {
            labels.extend(std::iter::repeat_n(g + 1, *n));
        }
    }
    let mut text = header.join(",");
    text.push('\n');
    for (t, r) in log.records().iter().enumerate() {
        let mut cells = vec![(t + 1).to_string()];
        if !labels.is_empty() {
            cells.push(labels[t].to_string());
        }
        cells.extend(r.covariates.iter().map(|v| fmt(*v)));
        cells.push((r.arm + 1).to_string());
        cells.extend(r.probs.iter().map(|v| fmt(*v)));
        cells.push(fmt(r.outcome));
        cells.extend(r.predictions.iter().map(|v| fmt(*v)));
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&display, e))
}
