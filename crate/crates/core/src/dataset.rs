//! CSV ingestion and train/test splitting.

use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    #[default]
    Gaussian,
    Binomial,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Family::Gaussian),
            "binomial" | "logistic" => Ok(Family::Binomial),
            other => Err(Error::InvalidConfig(format!("unknown family '{other}'"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub response_name: String,
    pub family: Family,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// The rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: DMatrix::from_fn(idx.len(), self.p(), |i, j| self.x[(idx[i], j)]),
            y: DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]),
            feature_names: self.feature_names.clone(),
            response_name: self.response_name.clone(),
            family: self.family,
        }
    }
}

/// Reads a headed CSV file; every column other than `response` is a feature.
pub fn load_csv(path: impl AsRef<Path>, response: &str, family: Family) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    read_csv(file, response, family)
}

/// As [`load_csv`] from any reader. Row numbers in errors count data rows from 1.
pub fn read_csv<R: Read>(reader: R, response: &str, family: Family) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let resp_col = headers
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::MissingColumn(response.to_string()))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != resp_col)
        .map(|(_, h)| h.clone())
        .collect();
    let p = feature_names.len();
    let mut values: Vec<f64> = Vec::new();
    let mut y: Vec<f64> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell {
                    row,
                    col: headers[c].clone(),
                })?;
            if c == resp_col {
                if family == Family::Binomial && v != 0.0 && v != 1.0 {
                    return Err(Error::NonBinaryResponse(row));
                }
                y.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = y.len();
    Ok(Dataset {
        x: DMatrix::from_row_slice(n, p, &values),
        y: DVector::from_vec(y),
        feature_names,
        response_name: response.to_string(),
        family,
    })
}

/// Seeded random split with `round(n * test_fraction)` test rows.
pub fn split_train_test(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = data.n();
    let n_test = (n as f64 * test_fraction).round() as usize;
    if n_test == 0 || n - n_test < 2 {
        return Err(Error::SplitTooSmall(format!(
            "{n} rows give {n_test} test and {} training rows",
            n - n_test
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (test, train) = perm.split_at(n_test);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((data.subset(&train), data.subset(&test)))
}
