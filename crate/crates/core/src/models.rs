use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::linalg::StandardizedDesign;

/// Fitting procedures compared in the benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Afs,
    Fs,
    Lasso,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Afs => "afs",
            Method::Fs => "fs",
            Method::Lasso => "lasso",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.trim().to_ascii_lowercase().as_str() {
            "afs" => Ok(Method::Afs),
            "fs" => Ok(Method::Fs),
            "lasso" => Ok(Method::Lasso),
            other => Err(Error::InvalidConfig(format!("unknown method '{other}'"))),
        }
    }
}

/// A linear model on the original (raw) scale of the predictors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub intercept: f64,
    pub beta: Vec<f64>,
}

impl FittedModel {
    pub fn from_standardized(design: &StandardizedDesign, beta_std: &DVector<f64>) -> Self {
        let (intercept, beta) = design.to_original_scale(beta_std);
        Self {
            intercept,
            beta: beta.as_slice().to_vec(),
        }
    }

    /// Linear predictor `intercept + x beta` for raw rows `x`.
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let b = DVector::from_column_slice(&self.beta);
        (x * b).add_scalar(self.intercept)
    }

    /// Indices of the nonzero coefficients.
    pub fn support(&self) -> Vec<usize> {
        self.beta
            .iter()
            .enumerate()
            .filter(|(_, b)| **b != 0.0)
            .map(|(j, _)| j)
            .collect()
    }
}
