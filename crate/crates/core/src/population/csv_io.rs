use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::FinitePopulation;
use crate::error::{Error, Result};

/// Column layout shared by the population and log readers.
pub(crate) struct Header {
    pub has_block: bool,
}

/// Read a CSV file into its header and body rows, with 1-based source line numbers.
/// Header columns and `(line number, cells)` rows.
pub(crate) type Table = (Vec<String>, Vec<(usize, Vec<String>)>);

pub(crate) fn read_table(path: &Path) -> Result<Table> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut rows = Vec::new();
    let mut header = None;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Csv {
            path: display.clone(),
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let cells: Vec<String> = record.iter().map(str::to_owned).collect();
        if cells.iter().all(String::is_empty) {
            continue;
        }
        if header.is_none() {
            header = Some(cells);
        } else {
            rows.push((line, cells));
        }
    }
    let header = header.ok_or_else(|| Error::Csv {
        path: display,
        line: 1,
        message: "missing header row".into(),
    })?;
    Ok((header, rows))
}

pub(crate) fn csv_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub(crate) fn parse_number(path: &Path, line: usize, column: &str, cell: &str) -> Result<f64> {
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| {
            csv_error(
                path,
                line,
                format!("column `{column}`: `{cell}` is not a finite number"),
            )
        })
}

/// Count a run of `prefix1, prefix2, …` columns starting at `start`.
pub(crate) fn indexed_run(columns: &[String], start: usize, prefix: &str) -> usize {
    let mut n = 0;
    while let Some(name) = columns.get(start + n) {
        if *name != format!("{prefix}{}", n + 1) {
            break;
        }
        n += 1;
    }
    n
}

pub(crate) fn check_leading(path: &Path, columns: &[String]) -> Result<Header> {
    if columns.first().map(String::as_str) != Some("unit") {
        return Err(csv_error(path, 1, "first column must be `unit`"));
    }
    Ok(Header {
        has_block: columns.get(1).map(String::as_str) == Some("block"),
    })
}

/// Turn per-row block labels into group sizes, requiring each label to form
/// one contiguous run and labels to increase.
pub(crate) fn block_sizes(path: &Path, labels: &[(usize, i64)]) -> Result<Vec<usize>> {
    let mut sizes: Vec<usize> = Vec::new();
    let mut current: Option<i64> = None;
    for &(line, label) in labels {
        match current {
            Some(c) if c == label => *sizes.last_mut().unwrap() += 1,
            Some(c) if label < c => {
                return Err(csv_error(
                    path,
                    line,
                    format!(
                        "block {label} follows block {c}; blocks must be contiguous and ordered"
                    ),
                ))
            }
            _ => {
                sizes.push(1);
                current = Some(label);
            }
        }
    }
    Ok(sizes)
}

pub(crate) fn parse_block(path: &Path, line: usize, cell: &str) -> Result<i64> {
    cell.parse::<i64>().map_err(|_| {
        csv_error(
            path,
            line,
            format!("block label `{cell}` is not an integer"),
        )
    })
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// Read a population from `unit[,block],y1..yK[,x1..xJ]` CSV.
pub fn read_population_csv(path: impl AsRef<Path>) -> Result<FinitePopulation> {
    let path = path.as_ref();
    let (columns, rows) = read_table(path)?;
    let header = check_leading(path, &columns)?;
    let y_start = 1 + usize::from(header.has_block);
    let k = indexed_run(&columns, y_start, "y");
    let j = indexed_run(&columns, y_start + k, "x");
    if y_start + k + j != columns.len() {
        return Err(csv_error(
            path,
            1,
            format!(
                "unexpected column `{}`; expected unit[,block],y1..yK[,x1..xJ]",
                columns[y_start + k + j]
            ),
        ));
    }
    if k < 2 {
        return Err(csv_error(
            path,
            1,
            "need at least two outcome columns y1, y2",
        ));
    }
    if rows.is_empty() {
        return Err(Error::InvalidPopulation(
            "population must contain at least one unit".into(),
        ));
    }
    let mut ys = Vec::with_capacity(rows.len());
    let mut xs = Vec::with_capacity(rows.len());
    let mut labels = Vec::new();
    for (line, cells) in &rows {
        if cells.len() != columns.len() {
            return Err(csv_error(
                path,
                *line,
                format!(
                    "row has {} fields, header has {}",
                    cells.len(),
                    columns.len()
                ),
            ));
        }
        if header.has_block {
            labels.push((*line, parse_block(path, *line, &cells[1])?));
        }
        let mut y = Vec::with_capacity(k);
        for c in y_start..y_start + k {
            y.push(parse_number(path, *line, &columns[c], &cells[c])?);
        }
        let mut x = Vec::with_capacity(j);
        for c in y_start + k..columns.len() {
            x.push(parse_number(path, *line, &columns[c], &cells[c])?);
        }
        ys.push(y);
        xs.push(x);
    }
    let blocks = if header.has_block {
        Some(block_sizes(path, &labels)?)
    } else {
        None
    };
    FinitePopulation::new(ys, xs, blocks)
}

pub fn write_population_csv(population: &FinitePopulation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = BufWriter::new(file);
    let mut header = vec!["unit".to_string()];
    if population.blocks().is_some() {
        header.push("block".into());
    }
    header.extend((1..=population.num_arms()).map(|z| format!("y{z}")));
    header.extend((1..=population.num_covariates()).map(|j| format!("x{j}")));
    let block_of = block_labels(population);
    let mut text = header.join(",");
    text.push('\n');
    for t in 0..population.num_units() {
        let mut cells = vec![(t + 1).to_string()];
        if let Some(labels) = &block_of {
            cells.push(labels[t].to_string());
        }
        cells.extend(population.outcomes(t).iter().map(|v| fmt(*v)));
        cells.extend(population.covariates(t).iter().map(|v| fmt(*v)));
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(&display, e))
}

/// 1-based block label for every unit, if the population is blocked.
pub(crate) fn block_labels(population: &FinitePopulation) -> Option<Vec<usize>> {
    population.blocks().map(|b| {
        let mut labels = Vec::with_capacity(b.num_units());
        for (g, n) in b.sizes().iter().enumerate() {
            labels.extend(std::iter::repeat_n(g + 1, *n));
        }
        labels
    })
}
