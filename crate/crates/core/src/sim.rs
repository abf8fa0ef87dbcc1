//! Synthetic data, evaluation metrics and the benchmark harness.
//!
//! Rows of `X` are drawn from an equicorrelated Gaussian with variance
//! `sigma2_x` and covariance `s_x`, using
//! `X = sqrt(sigma2_x - s_x) Z + sqrt(s_x) z0 1'`. The noise variance is
//! solved from `snr = beta' Sigma beta / sigma_eps^2`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afs::{afs_fit, AfsConfig};
use crate::cv::{kfold_cv, refit, Fitter};
use crate::error::{Error, Result};
use crate::lasso::lasso_path;
use crate::linalg::standardize;
use crate::models::{FittedModel, Method};

/// Mixes `parts` into `seed` with splitmix64 so every (cell, trial) pair gets
/// its own stream.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

fn normal_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            x[(i, j)] = StandardNormal.sample(rng);
        }
    }
    x
}

/// Independent Gaussian design with `y = X beta + sigma * eps`.
pub fn gaussian_instance(n: usize, p: usize, beta: &[f64], sigma: f64, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    assert_eq!(beta.len(), p, "beta length must equal p");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = normal_matrix(&mut rng, n, p);
    let eps = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let y = &x * DVector::from_column_slice(beta) + eps.scale(sigma);
    (x, y)
}

/// Centered design with orthonormal columns (`X'X = I`) and
/// `y = X beta + sigma * eps`.
pub fn orthonormal_instance(n: usize, beta: &[f64], sigma: f64, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let p = beta.len();
    assert!(n > p, "orthonormal columns need n > p");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = normal_matrix(&mut rng, n, p);
    for j in 0..p {
        let mean = g.column(j).mean();
        g.column_mut(j).add_scalar_mut(-mean);
    }
    let q = g.qr().q();
    let eps = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let mut y = &q * DVector::from_column_slice(beta) + eps.scale(sigma);
    let ybar = y.mean();
    y.add_scalar_mut(-ybar);
    (q, y)
}

/// One cell of the simulation grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    /// Common off-diagonal covariance.
    pub s_x: f64,
    /// Common variance.
    pub sigma2_x: f64,
    pub beta: Vec<f64>,
    pub snr: f64,
    pub seed: u64,
}

impl SimConfig {
    /// `beta_1..beta_5 = 2`, the rest zero.
    pub fn sparse_beta(p: usize) -> Vec<f64> {
        (0..p).map(|j| if j < 5 { 2.0 } else { 0.0 }).collect()
    }

    /// Unit variances and correlation `corr`, with the sparse coefficient vector.
    pub fn equicorrelated(n: usize, p: usize, corr: f64, snr: f64, seed: u64) -> Self {
        Self {
            n,
            p,
            s_x: corr,
            sigma2_x: 1.0,
            beta: Self::sparse_beta(p),
            snr,
            seed,
        }
    }

    pub fn correlation(&self) -> f64 {
        self.s_x / self.sigma2_x
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.p == 0 {
            return Err(Error::InvalidConfig(format!("need n >= 2 and p >= 1, got n={}, p={}", self.n, self.p)));
        }
        if self.beta.len() != self.p {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries for p = {}",
                self.beta.len(),
                self.p
            )));
        }
        if !(self.sigma2_x > 0.0) || !(self.s_x >= 0.0) || self.s_x >= self.sigma2_x {
            return Err(Error::InvalidCovariance(format!(
                "need 0 <= s_x < sigma2_x, got s_x={}, sigma2_x={}",
                self.s_x, self.sigma2_x
            )));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::InvalidConfig(format!("snr must be positive, got {}", self.snr)));
        }
        Ok(())
    }

    /// `beta' Sigma beta` for the equicorrelated covariance.
    pub fn signal_variance(&self) -> f64 {
        let sum: f64 = self.beta.iter().sum();
        let sq: f64 = self.beta.iter().map(|b| b * b).sum();
        (self.sigma2_x - self.s_x) * sq + self.s_x * sum * sum
    }

    pub fn noise_variance(&self) -> Result<f64> {
        let signal = self.signal_variance();
        if signal <= 0.0 {
            return Err(Error::SnrUndefined);
        }
        Ok(signal / self.snr)
    }

    pub fn true_support(&self) -> Vec<usize> {
        (0..self.p).filter(|&j| self.beta[j] != 0.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub mu: DVector<f64>,
    pub sigma_eps: f64,
}

pub fn gen_data(config: &SimConfig) -> Result<SimData> {
    config.validate()?;
    let sigma_eps = config.noise_variance()?.sqrt();
    let (n, p) = (config.n, config.p);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let a = (config.sigma2_x - config.s_x).sqrt();
    let b = config.s_x.sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let z0: f64 = StandardNormal.sample(&mut rng);
        for j in 0..p {
            let z: f64 = StandardNormal.sample(&mut rng);
            x[(i, j)] = a * z + b * z0;
        }
    }
    let mu = &x * DVector::from_column_slice(&config.beta);
    let eps = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    let y = &mu + eps.scale(sigma_eps);
    Ok(SimData { x, y, mu, sigma_eps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub method: Method,
    /// `||X beta_hat - mu||^2` (intercept included in the fitted values).
    pub mse: f64,
    pub support: usize,
    pub fpr: f64,
    pub tpr: f64,
    pub wall_time_secs: f64,
}

/// Scores a fitted model against the true mean `mu` of the rows `x`.
pub fn evaluate(method: Method, model: &FittedModel, x: &DMatrix<f64>, mu: &DVector<f64>, true_support: &[usize]) -> TrialMetrics {
    let p = model.beta.len();
    let fitted = model.predict(x);
    let mse = (fitted - mu).norm_squared();
    let support = model.support();
    let tp = support.iter().filter(|j| true_support.contains(j)).count();
    let fp = support.len() - tp;
    let s0 = true_support.len();
    TrialMetrics {
        method,
        mse,
        support: support.len(),
        fpr: if p > s0 { fp as f64 / (p - s0) as f64 } else { 0.0 },
        tpr: if s0 > 0 { tp as f64 / s0 as f64 } else { 1.0 },
        wall_time_secs: 0.0,
    }
}

/// Knobs shared by every cell of a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchOptions {
    pub folds: usize,
    pub rho_grid: Vec<f64>,
    pub max_steps: usize,
    pub fs_max_steps: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            folds: 10,
            rho_grid: crate::cv::DEFAULT_RHO_GRID.to_vec(),
            max_steps: 300,
            fs_max_steps: 40,
            n_lambda: 100,
            lambda_min_ratio: 1e-3,
        }
    }
}

impl BenchOptions {
    fn fitter(&self, method: Method) -> Fitter {
        match method {
            Method::Afs => Fitter::Afs {
                rho_grid: self.rho_grid.clone(),
                max_steps: self.max_steps,
                l1_cap: crate::afs::L1Cap::Auto,
            },
            Method::Fs => Fitter::Fs {
                max_steps: self.fs_max_steps,
                l1_cap: crate::afs::L1Cap::Auto,
            },
            Method::Lasso => Fitter::Lasso {
                n_lambda: self.n_lambda,
                lambda_min_ratio: self.lambda_min_ratio,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub cell: usize,
    pub n: usize,
    pub p: usize,
    pub corr: f64,
    pub snr: f64,
    pub trial: usize,
    pub method: Method,
    pub mse: f64,
    pub support: usize,
    pub fpr: f64,
    pub tpr: f64,
    pub wall_time_secs: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: usize,
    pub n: usize,
    pub p: usize,
    pub corr: f64,
    pub snr: f64,
    pub method: Method,
    pub trials_ok: usize,
    pub trials_failed: usize,
    pub median_mse: f64,
    pub sd_mse: f64,
    pub median_support: f64,
    pub sd_support: f64,
    pub median_fpr: f64,
    pub sd_fpr: f64,
    pub median_tpr: f64,
    pub sd_tpr: f64,
    pub median_wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<CellSummary>,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let k = s.len();
    if k % 2 == 1 {
        s[k / 2]
    } else {
        0.5 * (s[k / 2 - 1] + s[k / 2])
    }
}

pub fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Fits the full path of `method` on the whole data; this is what the timing
/// columns measure.
fn fit_full_path(method: Method, x: &DMatrix<f64>, y: &DVector<f64>, opts: &BenchOptions) -> Result<usize> {
    let design = standardize(x, y, true)?;
    Ok(match method {
        Method::Afs => {
            let rho = opts.rho_grid.iter().copied().fold(f64::INFINITY, f64::min);
            afs_fit(&design, &AfsConfig::new(rho, opts.max_steps))?.final_active().len()
        }
        Method::Fs => afs_fit(&design, &AfsConfig::forward_stepwise(opts.fs_max_steps))?
            .final_active()
            .len(),
        Method::Lasso => {
            let path = lasso_path(&design, opts.n_lambda, opts.lambda_min_ratio)?;
            path.betas
                .last()
                .map(|b| b.iter().filter(|v| **v != 0.0).count())
                .unwrap_or(0)
        }
    })
}

/// CV-tuned fit of one method on one simulated data set.
pub fn run_trial(method: Method, data: &SimData, true_support: &[usize], opts: &BenchOptions, cv_seed: u64) -> Result<TrialMetrics> {
    let fitter = opts.fitter(method);
    let report = kfold_cv(&data.x, &data.y, &fitter, opts.folds, cv_seed)?;
    let model = refit(&data.x, &data.y, &fitter, &report.selected_point())?;
    let start = Instant::now();
    fit_full_path(method, &data.x, &data.y, opts)?;
    let elapsed = start.elapsed().as_secs_f64();
    let mut metrics = evaluate(method, &model, &data.x, &data.mu, true_support);
    metrics.wall_time_secs = elapsed;
    Ok(metrics)
}

/// Runs every method on `trials` data sets per cell. A cell's own `seed`
/// field is ignored; data and fold seeds derive from `seed`, the cell index
/// and the trial index. Failed trials are recorded with their error.
pub fn run_benchmark(cells: &[SimConfig], methods: &[Method], trials: usize, seed: u64, opts: &BenchOptions) -> Result<BenchmarkReport> {
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    for c in cells {
        c.validate()?;
    }
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let rows: Vec<Vec<BenchRow>> = tasks
        .par_iter()
        .map(|&(c, t)| {
            let mut cfg = cells[c].clone();
            cfg.seed = derive_seed(seed, &[c as u64, t as u64, 0]);
            let cv_seed = derive_seed(seed, &[c as u64, t as u64, 1]);
            let support = cfg.true_support();
            let data = gen_data(&cfg);
            methods
                .iter()
                .map(|&method| {
                    let base = BenchRow {
                        cell: c,
                        n: cfg.n,
                        p: cfg.p,
                        corr: cfg.correlation(),
                        snr: cfg.snr,
                        trial: t,
                        method,
                        mse: f64::NAN,
                        support: 0,
                        fpr: f64::NAN,
                        tpr: f64::NAN,
                        wall_time_secs: f64::NAN,
                        error: None,
                    };
                    let outcome = data
                        .as_ref()
                        .map_err(Clone::clone)
                        .and_then(|d| run_trial(method, d, &support, opts, cv_seed));
                    match outcome {
                        Ok(m) => BenchRow {
                            mse: m.mse,
                            support: m.support,
                            fpr: m.fpr,
                            tpr: m.tpr,
                            wall_time_secs: m.wall_time_secs,
                            ..base
                        },
                        Err(e) => {
                            log::warn!("cell {c} trial {t} {method}: {e}");
                            BenchRow {
                                error: Some(e.to_string()),
                                ..base
                            }
                        }
                    }
                })
                .collect()
        })
        .collect();
    let rows: Vec<BenchRow> = rows.into_iter().flatten().collect();
    let summary = summarize(cells, methods, &rows);
    Ok(BenchmarkReport {
        seed,
        trials,
        rows,
        summary,
    })
}

fn summarize(cells: &[SimConfig], methods: &[Method], rows: &[BenchRow]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for (c, cfg) in cells.iter().enumerate() {
        for &method in methods {
            let ok: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.cell == c && r.method == method && r.error.is_none())
                .collect();
            let failed = rows
                .iter()
                .filter(|r| r.cell == c && r.method == method && r.error.is_some())
                .count();
            let col = |f: fn(&BenchRow) -> f64| -> Vec<f64> { ok.iter().map(|r| f(r)).collect() };
            let mse = col(|r| r.mse);
            let sup = col(|r| r.support as f64);
            let fpr = col(|r| r.fpr);
            let tpr = col(|r| r.tpr);
            let time = col(|r| r.wall_time_secs);
            out.push(CellSummary {
                cell: c,
                n: cfg.n,
                p: cfg.p,
                corr: cfg.correlation(),
                snr: cfg.snr,
                method,
                trials_ok: ok.len(),
                trials_failed: failed,
                median_mse: median(&mse),
                sd_mse: std_dev(&mse),
                median_support: median(&sup),
                sd_support: std_dev(&sup),
                median_fpr: median(&fpr),
                sd_fpr: std_dev(&fpr),
                median_tpr: median(&tpr),
                sd_tpr: std_dev(&tpr),
                median_wall_time_secs: median(&time),
            });
        }
    }
    out
}

impl BenchmarkReport {
    /// Tidy CSV, one row per trial and method. Timing columns are included
    /// only on request since they are not reproducible.
    pub fn to_csv(&self, include_timing: bool) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["cell", "n", "p", "corr", "snr", "trial", "method", "mse", "support", "fpr", "tpr"];
        if include_timing {
            header.push("wall_time_secs");
        }
        header.push("error");
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.cell.to_string(),
                r.n.to_string(),
                r.p.to_string(),
                r.corr.to_string(),
                r.snr.to_string(),
                r.trial.to_string(),
                r.method.to_string(),
                r.mse.to_string(),
                r.support.to_string(),
                r.fpr.to_string(),
                r.tpr.to_string(),
            ];
            if include_timing {
                rec.push(r.wall_time_secs.to_string());
            }
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Summary JSON. Without timing, wall-clock fields are zeroed.
    pub fn to_json(&self, include_timing: bool) -> Result<String> {
        let mut copy = self.clone();
        if !include_timing {
            for r in &mut copy.rows {
                r.wall_time_secs = 0.0;
            }
            for s in &mut copy.summary {
                s.median_wall_time_secs = 0.0;
            }
        }
        Ok(serde_json::to_string_pretty(&copy)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub n: usize,
    pub p: usize,
    pub method: Method,
    pub trial: usize,
    pub selected: usize,
    pub wall_time_secs: f64,
}

/// Times full-path fits (no CV) on fresh data for each `p`.
pub fn run_timing(n: usize, ps: &[usize], methods: &[Method], trials: usize, seed: u64, opts: &BenchOptions) -> Result<Vec<TimingRow>> {
    let mut out = Vec::new();
    for (c, &p) in ps.iter().enumerate() {
        for t in 0..trials {
            let mut cfg = SimConfig::equicorrelated(n, p, 0.0, 2.0, 0);
            cfg.seed = derive_seed(seed, &[c as u64, t as u64]);
            let data = gen_data(&cfg)?;
            for &method in methods {
                let start = Instant::now();
                let selected = fit_full_path(method, &data.x, &data.y, opts)?;
                out.push(TimingRow {
                    n,
                    p,
                    method,
                    trial: t,
                    selected,
                    wall_time_secs: start.elapsed().as_secs_f64(),
                });
            }
        }
    }
    Ok(out)
}
