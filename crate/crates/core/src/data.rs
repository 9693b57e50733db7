//! Tabular datasets: CSV ingestion, column clean-up, standardization and
//! export.
//!
//! Numbers are written with 17 significant digits so that a write/read cycle
//! reproduces every value exactly.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result, ResultExt};

/// Fewest rows a usable dataset may have.
pub const MIN_ROWS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Predictor names, one per column of `x`.
    pub names: Vec<String>,
    pub response_name: String,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, names: Vec<String>, response_name: String) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Shape(format!("{} design rows, {} responses", x.nrows(), y.len())));
        }
        if names.len() != x.ncols() {
            return Err(Error::Shape(format!("{} names for {} columns", names.len(), x.ncols())));
        }
        Ok(Dataset {
            x,
            y,
            names,
            response_name,
        })
    }

    /// Dataset with predictors named `x1..xp` and response `y`.
    pub fn with_default_names(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(x, y, names, "y".to_string())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// What `load_csv_dataset` removed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub dropped_rows: usize,
    pub duplicate_columns: Vec<String>,
    pub zero_columns: Vec<String>,
}

fn is_missing(cell: &str) -> bool {
    cell.is_empty()
        || cell.eq_ignore_ascii_case("na")
        || cell.eq_ignore_ascii_case("nan")
        || cell.eq_ignore_ascii_case("null")
}

fn parse_cell(cell: &str, row: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("`{cell}` is not a finite number"),
        }),
    }
}

pub fn load_csv_dataset(path: impl AsRef<Path>, response: &str) -> Result<(Dataset, LoadReport)> {
    let path = path.as_ref();
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_csv_dataset(file, response).with_context(|| format!("reading {}", path.display()))
}

/// Reads a headed numeric table, drops rows whose response is missing and
/// removes all-zero and duplicated predictor columns (first copy kept).
pub fn parse_csv_dataset<R: Read>(reader: R, response: &str) -> Result<(Dataset, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();

    let mut seen = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        if let Some(first) = seen.insert(name.as_str(), i) {
            return Err(Error::Input(format!(
                "column name `{name}` appears at positions {} and {}",
                first + 1,
                i + 1
            )));
        }
    }
    let response_idx = *seen
        .get(response)
        .ok_or_else(|| Error::Input(format!("response column `{response}` not found")))?;
    let predictor_idx: Vec<usize> = (0..header.len()).filter(|&i| i != response_idx).collect();
    if predictor_idx.is_empty() {
        return Err(Error::Input("no predictor columns".into()));
    }

    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); predictor_idx.len()];
    let mut y = Vec::new();
    let mut report = LoadReport::default();
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record).map_err(|e| {
            let row = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse {
                row,
                column: String::new(),
                message: e.to_string(),
            }
        })?;
        if !more {
            break;
        }
        let row = record.position().map_or(0, |p| p.line() as usize);
        let cell = &record[response_idx];
        if is_missing(cell) {
            report.dropped_rows += 1;
            continue;
        }
        y.push(parse_cell(cell, row, response)?);
        for (col, &i) in columns.iter_mut().zip(&predictor_idx) {
            col.push(parse_cell(&record[i], row, &header[i])?);
        }
    }
    let n = y.len();
    if n < MIN_ROWS {
        return Err(Error::Input(format!("{n} usable rows, need at least {MIN_ROWS}")));
    }

    let mut kept: Vec<usize> = Vec::new();
    let mut fingerprints: HashMap<Vec<u64>, usize> = HashMap::new();
    for (c, col) in columns.iter().enumerate() {
        let name = &header[predictor_idx[c]];
        if col.iter().all(|v| *v == 0.0) {
            report.zero_columns.push(name.clone());
            continue;
        }
        // +0.0 and -0.0 compare equal, so normalise before hashing.
        let key: Vec<u64> = col.iter().map(|v| (v + 0.0).to_bits()).collect();
        if let Some(&first) = fingerprints.get(&key) {
            log::debug!("column `{name}` duplicates `{}`", header[predictor_idx[first]]);
            report.duplicate_columns.push(name.clone());
            continue;
        }
        fingerprints.insert(key, c);
        kept.push(c);
    }
    if kept.is_empty() {
        return Err(Error::Input("every predictor column is zero or duplicated".into()));
    }

    let x = DMatrix::from_fn(n, kept.len(), |i, j| columns[kept[j]][i]);
    let names = kept.iter().map(|&c| header[predictor_idx[c]].clone()).collect();
    let dataset = Dataset::new(x, DVector::from_vec(y), names, response.to_string())?;
    Ok((dataset, report))
}

fn center_scale(values: &mut [f64], name: &str) -> Result<()> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) {
        return Err(Error::Input(format!("column `{name}` has zero variance")));
    }
    for v in values.iter_mut() {
        *v = (*v - mean) / sd;
    }
    Ok(())
}

/// Centers every predictor and the response and scales them to unit sample
/// standard deviation (divisor `n − 1`).
pub fn standardize_columns(dataset: &Dataset) -> Result<Dataset> {
    if dataset.n() < 2 {
        return Err(Error::Input("standardization needs at least two rows".into()));
    }
    let mut out = dataset.clone();
    for (j, mut col) in out.x.column_iter_mut().enumerate() {
        center_scale(col.as_mut_slice(), &dataset.names[j])?;
    }
    center_scale(out.y.as_mut_slice(), &dataset.response_name)?;
    Ok(out)
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_dataset_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = dataset.names.clone();
    header.push(dataset.response_name.clone());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..dataset.n() {
        row.clear();
        row.extend(dataset.x.row(i).iter().map(|v| format_f64(*v)));
        row.push(format_f64(dataset.y[i]));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One line of a ground-truth file.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthRecord {
    pub coordinate: String,
    pub beta: f64,
    pub omega_jj: f64,
}

pub const TRUTH_HEADER: [&str; 3] = ["coordinate", "beta", "omega_jj"];

pub fn write_truth_csv<W: Write>(records: &[TruthRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRUTH_HEADER)?;
    for r in records {
        w.write_record([r.coordinate.clone(), format_f64(r.beta), format_f64(r.omega_jj)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_truth_csv<R: Read>(reader: R) -> Result<Vec<TruthRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(TRUTH_HEADER) {
        return Err(Error::Input(format!(
            "truth header must be `{}`",
            TRUTH_HEADER.join(",")
        )));
    }
    let mut records = Vec::new();
    let mut seen = HashMap::new();
    for result in rdr.records() {
        let record = result.map_err(|e| Error::Parse {
            row: e.position().map_or(0, |p| p.line() as usize),
            column: String::new(),
            message: e.to_string(),
        })?;
        let row = record.position().map_or(0, |p| p.line() as usize);
        let coordinate = record[0].to_string();
        if seen.insert(coordinate.clone(), row).is_some() {
            return Err(Error::Input(format!("coordinate `{coordinate}` listed twice")));
        }
        records.push(TruthRecord {
            coordinate,
            beta: parse_cell(&record[1], row, "beta")?,
            omega_jj: parse_cell(&record[2], row, "omega_jj")?,
        });
    }
    Ok(records)
}

pub fn load_truth_csv(path: impl AsRef<Path>) -> Result<Vec<TruthRecord>> {
    let path = path.as_ref();
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    parse_truth_csv(file).with_context(|| format!("reading {}", path.display()))
}
