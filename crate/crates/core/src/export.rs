//! Path files: JSON with the full history, or long-format CSV with columns
//! `step, variable, coefficient, l1, rss`.
//!
//! Coefficients are written on the original predictor scale. `l1` is the
//! norm the fitter tracked (standardized scale); `rss` is empty for paths
//! that carry a deviance instead.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::afs::{AfsConfig, AfsPath};
use crate::dataset::Family;
use crate::error::{Error, Result};
use crate::lasso::LassoPath;
use crate::linalg::StandardizedDesign;
use crate::logistic::LogisticAfsPath;
use crate::models::FittedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub step: usize,
    pub intercept: f64,
    /// Original-scale coefficients.
    pub beta: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub chosen: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub entered: Option<bool>,
    pub active: Vec<usize>,
    pub l1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub deviance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
}

impl PathRecord {
    pub fn model(&self) -> FittedModel {
        FittedModel {
            intercept: self.intercept,
            beta: self.beta.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathFile {
    pub method: String,
    pub family: Family,
    pub response: String,
    pub feature_names: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub config: Option<AfsConfig>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stop_reason: Option<String>,
    /// Resolved l1 bound; absent when unbounded.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l1_cap: Option<f64>,
    pub steps: Vec<PathRecord>,
}

fn finite(h: f64) -> Option<f64> {
    h.is_finite().then_some(h)
}

fn stop_name<T: Serialize>(reason: &T) -> Option<String> {
    serde_json::to_value(reason).ok().and_then(|v| v.as_str().map(str::to_string))
}

impl PathFile {
    pub fn from_afs(design: &StandardizedDesign, path: &AfsPath, names: &[String], response: &str) -> Self {
        let method = if path.config.rho == 1.0 { "fs" } else { "afs" };
        let steps = path
            .steps
            .iter()
            .map(|s| {
                let m = FittedModel::from_standardized(design, &nalgebra::DVector::from_column_slice(&s.beta));
                PathRecord {
                    step: s.m,
                    intercept: m.intercept,
                    beta: m.beta,
                    chosen: Some(s.chosen),
                    entered: Some(s.entered),
                    active: s.active.clone(),
                    l1: s.l1,
                    rss: Some(s.rss),
                    deviance: None,
                    lambda: None,
                }
            })
            .collect();
        Self {
            method: method.into(),
            family: Family::Gaussian,
            response: response.into(),
            feature_names: names.to_vec(),
            config: Some(path.config),
            stop_reason: stop_name(&path.stop_reason),
            l1_cap: finite(path.l1_cap),
            steps,
        }
    }

    pub fn from_lasso(design: &StandardizedDesign, path: &LassoPath, names: &[String], response: &str) -> Self {
        let steps = (0..path.len())
            .map(|k| {
                let b = path.beta(k);
                let m = FittedModel::from_standardized(design, &b);
                PathRecord {
                    step: k + 1,
                    intercept: m.intercept,
                    beta: m.beta,
                    chosen: None,
                    entered: None,
                    active: (0..b.len()).filter(|&j| b[j] != 0.0).collect(),
                    l1: b.lp_norm(1),
                    rss: Some(design.residual(&b).norm_squared()),
                    deviance: None,
                    lambda: Some(path.lambdas[k]),
                }
            })
            .collect();
        Self {
            method: "lasso".into(),
            family: Family::Gaussian,
            response: response.into(),
            feature_names: names.to_vec(),
            config: None,
            stop_reason: None,
            l1_cap: None,
            steps,
        }
    }

    pub fn from_logistic(design: &StandardizedDesign, path: &LogisticAfsPath, names: &[String], response: &str) -> Self {
        let steps = path
            .steps
            .iter()
            .map(|s| {
                let m = path.model(design, s.m);
                PathRecord {
                    step: s.m,
                    intercept: m.intercept,
                    beta: m.beta,
                    chosen: Some(s.chosen),
                    entered: Some(s.entered),
                    active: s.active.clone(),
                    l1: s.l1,
                    rss: None,
                    deviance: Some(s.deviance),
                    lambda: None,
                }
            })
            .collect();
        Self {
            method: "afs".into(),
            family: Family::Binomial,
            response: response.into(),
            feature_names: names.to_vec(),
            config: Some(path.config),
            stop_reason: stop_name(&path.stop_reason),
            l1_cap: finite(path.l1_cap),
            steps,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Long format, one row per step and variable.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["step", "variable", "coefficient", "l1", "rss"])?;
        for s in &self.steps {
            let rss = s.rss.map(|r| r.to_string()).unwrap_or_default();
            for (j, b) in s.beta.iter().enumerate() {
                let name = self.feature_names.get(j).cloned().unwrap_or_else(|| j.to_string());
                w.write_record([s.step.to_string(), name, b.to_string(), s.l1.to_string(), rss.clone()])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// The coefficient path `(step, coefficients)` of the model at `step`,
    /// if recorded.
    pub fn record(&self, step: usize) -> Option<&PathRecord> {
        self.steps.iter().find(|s| s.step == step)
    }
}

/// Reads the long CSV back into `(step, coefficients)` pairs, variables in
/// first-seen order.
pub fn read_path_csv<R: Read>(reader: R) -> Result<(Vec<String>, Vec<(usize, Vec<f64>)>)> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut names: Vec<String> = Vec::new();
    let mut steps: Vec<(usize, Vec<f64>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let step: usize = rec[0].parse().map_err(|_| Error::Parse(format!("bad step '{}'", &rec[0])))?;
        let name = rec[1].to_string();
        let coef: f64 = rec[2].parse().map_err(|_| Error::Parse(format!("bad coefficient '{}'", &rec[2])))?;
        let j = match names.iter().position(|n| *n == name) {
            Some(j) => j,
            None => {
                names.push(name);
                names.len() - 1
            }
        };
        if steps.last().map(|(s, _)| *s != step).unwrap_or(true) {
            steps.push((step, Vec::new()));
        }
        let row = &mut steps.last_mut().expect("pushed above").1;
        if row.len() != j {
            return Err(Error::Parse(format!("variables out of order at step {step}")));
        }
        row.push(coef);
    }
    Ok((names, steps))
}
