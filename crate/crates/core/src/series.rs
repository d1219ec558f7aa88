//! Rectangular multivariate observation records and their CSV form.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `T+1` rows by `M` named real-valued features, optionally with one
/// categorical tag per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    feature_names: Vec<String>,
    n_rows: usize,
    /// Row-major values.
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    labels: Option<Vec<String>>,
}

impl TimeSeries {
    pub fn new(feature_names: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_cols = feature_names.len();
        if n_cols == 0 {
            return Err(Error::Invariant("time series needs at least one feature".into()));
        }
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (r, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Invariant(format!(
                    "row {r} has {} values, expected {n_cols}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(feature_names, values)
    }

    pub fn from_flat(feature_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        let n_cols = feature_names.len();
        if n_cols == 0 || !values.len().is_multiple_of(n_cols) {
            return Err(Error::Invariant("time series is not rectangular".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-finite value at row {}, column {}",
                pos / n_cols,
                pos % n_cols
            )));
        }
        Ok(TimeSeries {
            n_rows: values.len() / n_cols,
            feature_names,
            values,
            labels: None,
        })
    }

    /// Default feature names `x0..x{M-1}`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.first().map_or(0, Vec::len);
        Self::new((0..m).map(|j| format!("x{j}")).collect(), rows)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_rows {
            return Err(Error::Invariant(format!(
                "{} labels for {} rows",
                labels.len(),
                self.n_rows
            )));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n_rows
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.feature_names.len() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let m = self.feature_names.len();
        &self.values[row * m..(row + 1) * m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, col)).collect()
    }

    pub fn column_mean(&self, col: usize) -> f64 {
        if self.n_rows == 0 {
            return 0.0;
        }
        (0..self.n_rows).map(|r| self.get(r, col)).sum::<f64>() / self.n_rows as f64
    }

    /// Sample standard deviation (n − 1 denominator).
    pub fn column_std(&self, col: usize) -> f64 {
        if self.n_rows < 2 {
            return 0.0;
        }
        let mean = self.column_mean(col);
        let ss: f64 = (0..self.n_rows)
            .map(|r| {
                let d = self.get(r, col) - mean;
                d * d
            })
            .sum();
        (ss / (self.n_rows - 1) as f64).sqrt()
    }

    /// Rows `start..end` as a new series; labels follow.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.n_rows {
            return Err(Error::IndexOutOfRange(format!(
                "slice {start}..{end} of {} rows",
                self.n_rows
            )));
        }
        let m = self.n_features();
        let mut out = TimeSeries::from_flat(
            self.feature_names.clone(),
            self.values[start * m..end * m].to_vec(),
        )?;
        out.labels = self.labels.as_ref().map(|l| l[start..end].to_vec());
        Ok(out)
    }

    /// Stack series with identical feature names end to end.
    pub fn concat(parts: &[TimeSeries]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InsufficientData("nothing to concatenate".into()))?;
        let mut values = Vec::new();
        let mut labels: Option<Vec<String>> = first.labels.as_ref().map(|_| Vec::new());
        for p in parts {
            if p.feature_names != first.feature_names {
                return Err(Error::Invariant("feature names differ between series".into()));
            }
            values.extend_from_slice(&p.values);
            match (&mut labels, &p.labels) {
                (Some(acc), Some(l)) => acc.extend(l.iter().cloned()),
                _ => labels = None,
            }
        }
        let mut out = TimeSeries::from_flat(first.feature_names.clone(), values)?;
        out.labels = labels;
        Ok(out)
    }

    /// Parse a CSV document with a mandatory header row. When `label_column`
    /// is given, that column is read as categorical tags and excluded from
    /// the features.
    pub fn read_csv<R: Read>(reader: R, label_column: Option<&str>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        if headers.is_empty() || headers.iter().all(String::is_empty) {
            return Err(Error::Parse("missing header row".into()));
        }
        let label_idx = match label_column {
            Some(name) => Some(
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Parse(format!("label column '{name}' not found")))?,
            ),
            None => None,
        };
        let names: Vec<String> = headers
            .iter()
            .enumerate()
            .filter(|(j, _)| Some(*j) != label_idx)
            .map(|(_, h)| h.clone())
            .collect();
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for (r, record) in rdr.records().enumerate() {
            let record = record?;
            if record.len() != headers.len() {
                return Err(Error::Parse(format!(
                    "line {}: {} fields, expected {}",
                    r + 2,
                    record.len(),
                    headers.len()
                )));
            }
            for (j, field) in record.iter().enumerate() {
                if Some(j) == label_idx {
                    labels.push(field.to_owned());
                    continue;
                }
                let v: f64 = field.parse().map_err(|_| {
                    Error::Parse(format!("line {}, column '{}': '{field}'", r + 2, headers[j]))
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse(format!(
                        "line {}, column '{}': non-finite value",
                        r + 2,
                        headers[j]
                    )));
                }
                values.push(v);
            }
        }
        let series = TimeSeries::from_flat(names, values)?;
        if label_idx.is_some() {
            series.with_labels(labels)
        } else {
            Ok(series)
        }
    }

    pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), label_column)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(&self.feature_names)?;
        for r in 0..self.n_rows {
            wtr.write_record(self.row(r).iter().map(|v| v.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
