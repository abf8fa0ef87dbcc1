//! Logistic-link AFS.
//!
//! Selection scans `|x_j'(y - p_hat)|`, the active-set fit is an IRLS
//! logistic regression warm-started at the previous fit, and the update mixes
//! coefficients and intercept as in the Gaussian case. The intercept is never
//! penalized and does not count towards the l1 bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::afs::{argmax_abs, AfsConfig, L1Cap};
use crate::error::{Error, Result};
use crate::lasso::{lambda_grid, soft_threshold};
use crate::linalg::{StandardizeOptions, StandardizedDesign};
use crate::models::FittedModel;

/// Bound on the slope norm beyond which the fit is declared separable.
pub const SEPARATION_NORM: f64 = 1e3;
/// IRLS stops once every score component is below this.
pub const SCORE_TOL: f64 = 1e-8;
const MAX_IRLS_ITER: usize = 100;
const MAX_HALVINGS: usize = 40;
/// Deviance below this means the classes are (numerically) separated.
const SEPARATED_DEVIANCE: f64 = 1e-6;

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))`.
fn softplus(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// `2 * sum(log(1 + exp(eta)) - y * eta)`.
pub fn binomial_deviance(y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    2.0 * y
        .iter()
        .zip(eta.iter())
        .map(|(&yi, &e)| softplus(e) - yi * e)
        .sum::<f64>()
}

pub fn check_binary(y: &DVector<f64>) -> Result<()> {
    match y.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(i) => Err(Error::NonBinaryResponse(i)),
        None => Ok(()),
    }
}

/// Standardized predictors with the 0/1 response left as is.
pub fn logistic_design(x_raw: &DMatrix<f64>, y_raw: &DVector<f64>) -> Result<StandardizedDesign> {
    check_binary(y_raw)?;
    StandardizedDesign::new(
        x_raw,
        y_raw,
        StandardizeOptions {
            unit_norm: true,
            center_response: false,
        },
    )
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `y - sigmoid(intercept + X beta)`.
pub fn logistic_residual(design: &StandardizedDesign, beta: &DVector<f64>, intercept: f64) -> Result<DVector<f64>> {
    check_binary(design.y())?;
    let eta = (design.x() * beta).add_scalar(intercept);
    Ok(DVector::from_fn(design.n(), |i, _| design.y()[i] - sigmoid(eta[i])))
}

/// Result of an IRLS fit restricted to an active set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveFit {
    pub intercept: f64,
    /// Slopes in the order of the active set.
    pub coef: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub separable: bool,
    pub deviance: f64,
}

/// Maximum-likelihood logistic fit on `active` (plus intercept), started
/// from `(warm_intercept, warm)`.
pub fn logistic_fit_active(
    design: &StandardizedDesign,
    active: &[usize],
    warm_intercept: f64,
    warm: &[f64],
) -> Result<ActiveFit> {
    if warm.len() != active.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} warm coefficients for {} active columns",
            warm.len(),
            active.len()
        )));
    }
    let y = design.y();
    check_binary(y)?;
    let n = design.n();
    let k = active.len() + 1;
    let z = DMatrix::from_fn(n, k, |i, c| if c == 0 { 1.0 } else { design.x()[(i, active[c - 1])] });

    let mut theta = DVector::from_fn(k, |c, _| if c == 0 { warm_intercept } else { warm[c - 1] });
    let mut dev = binomial_deviance(y, &(&z * &theta));
    let mut converged = false;
    let mut separable = false;
    let mut iterations = 0;

    while iterations < MAX_IRLS_ITER {
        let eta = &z * &theta;
        let p = eta.map(sigmoid);
        let score = z.tr_mul(&(y - &p));
        if score.amax() <= SCORE_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let w = p.map(|v| v * (1.0 - v));
        let mut zw = z.clone();
        for (i, mut row) in zw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let hess = z.tr_mul(&zw);
        let Some(chol) = hess.cholesky() else {
            if dev < SEPARATED_DEVIANCE {
                separable = true;
                break;
            }
            return Err(Error::IrlsSingular);
        };
        let delta = chol.solve(&score);
        if delta.iter().any(|d| !d.is_finite()) {
            return Err(Error::IrlsSingular);
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            let cand = &theta + delta.scale(t);
            let cand_dev = binomial_deviance(y, &(&z * &cand));
            if cand_dev <= dev + 1e-12 * dev.abs().max(1.0) {
                theta = cand;
                dev = cand_dev;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no descent left along the Newton direction
            converged = score.amax() <= 1e3 * SCORE_TOL;
            break;
        }
        if theta.rows(1, k - 1).norm() > SEPARATION_NORM {
            separable = true;
            break;
        }
    }
    if dev < SEPARATED_DEVIANCE && k > 1 {
        separable = true;
    }
    if separable && k > 1 {
        let norm = theta.rows(1, k - 1).norm();
        if norm > 0.0 {
            theta.scale_mut(SEPARATION_NORM / norm);
            dev = binomial_deviance(y, &(&z * &theta));
        }
        converged = false;
    }
    Ok(ActiveFit {
        intercept: theta[0],
        coef: theta.rows(1, k - 1).iter().copied().collect(),
        iterations,
        converged,
        separable,
        deviance: dev,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogisticStopReason {
    MaxSteps,
    L1CapReached,
    IrlsSingular,
    Separable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticStep {
    pub m: usize,
    pub beta: Vec<f64>,
    pub intercept: f64,
    pub chosen: usize,
    pub entered: bool,
    pub active: Vec<usize>,
    pub deviance: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticAfsPath {
    pub steps: Vec<LogisticStep>,
    pub config: AfsConfig,
    pub stop_reason: LogisticStopReason,
    pub l1_cap: f64,
    /// Intercept-only MLE, the starting point of the path.
    pub intercept0: f64,
    pub deviance0: f64,
    pub p: usize,
}

impl LogisticAfsPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(intercept, beta)` after `m` steps on the standardized scale, clamped
    /// to the last recorded step.
    pub fn coefficients(&self, m: usize) -> (f64, DVector<f64>) {
        if m == 0 || self.steps.is_empty() {
            return (self.intercept0, DVector::zeros(self.p));
        }
        let s = &self.steps[m.min(self.steps.len()) - 1];
        (s.intercept, DVector::from_column_slice(&s.beta))
    }

    /// Model after `m` steps on the original predictor scale.
    pub fn model(&self, design: &StandardizedDesign, m: usize) -> FittedModel {
        let (b0, beta) = self.coefficients(m);
        let orig = beta.component_div(design.col_scales());
        FittedModel {
            intercept: b0 - design.col_means().dot(&orig),
            beta: orig.as_slice().to_vec(),
        }
    }
}

pub(crate) fn resolve_logistic_cap(design: &StandardizedDesign, cap: L1Cap) -> Result<f64> {
    match cap {
        L1Cap::Fixed(h) => Ok(h),
        L1Cap::Auto => logistic_max_l1_norm(design),
    }
}

/// Logistic AFS. The path starts from the intercept-only fit.
pub fn afs_logistic_fit(design: &StandardizedDesign, config: &AfsConfig) -> Result<LogisticAfsPath> {
    config.validate()?;
    check_binary(design.y())?;
    let h = resolve_logistic_cap(design, config.l1_cap)?;
    afs_logistic_fit_with_cap(design, config, h)
}

/// As [`afs_logistic_fit`] with the l1 bound already resolved.
pub fn afs_logistic_fit_with_cap(design: &StandardizedDesign, config: &AfsConfig, h: f64) -> Result<LogisticAfsPath> {
    config.validate()?;
    let y = design.y();
    check_binary(y)?;
    let n = design.n();
    let p = design.p();
    let rho = config.rho;
    let ybar = y.sum() / n as f64;
    let degenerate = ybar == 0.0 || ybar == 1.0;
    let intercept0 = if degenerate {
        SEPARATION_NORM.copysign(ybar - 0.5)
    } else {
        logit(ybar)
    };
    let deviance0 = binomial_deviance(y, &DVector::from_element(n, intercept0));
    let mut path = LogisticAfsPath {
        steps: Vec::new(),
        config: *config,
        stop_reason: LogisticStopReason::MaxSteps,
        l1_cap: h,
        intercept0,
        deviance0,
        p,
    };
    if degenerate {
        path.stop_reason = LogisticStopReason::Separable;
        return Ok(path);
    }

    let mut beta = DVector::zeros(p);
    let mut b0 = intercept0;
    let mut active: Vec<usize> = Vec::new();
    let mut warm_b0 = intercept0;
    let mut warm: Vec<f64> = Vec::new();
    let mut l1 = 0.0;
    for m in 1..=config.max_steps {
        if l1 >= h {
            path.stop_reason = LogisticStopReason::L1CapReached;
            return Ok(path);
        }
        let r = logistic_residual(design, &beta, b0)?;
        let corr = design.x().tr_mul(&r);
        let j = argmax_abs(&corr, config.tie_break, &[]).expect("p >= 1");
        let entered = !active.contains(&j);
        if entered {
            active.push(j);
            warm.push(0.0);
        }
        let fit = match logistic_fit_active(design, &active, warm_b0, &warm) {
            Ok(f) => f,
            Err(Error::IrlsSingular) => {
                path.stop_reason = LogisticStopReason::IrlsSingular;
                return Ok(path);
            }
            Err(e) => return Err(e),
        };
        let mut nu = DVector::zeros(p);
        for (pos, &a) in active.iter().enumerate() {
            nu[a] = fit.coef[pos];
        }
        beta = beta.scale(1.0 - rho) + nu.scale(rho);
        b0 = (1.0 - rho) * b0 + rho * fit.intercept;
        warm_b0 = fit.intercept;
        warm.clone_from(&fit.coef);
        l1 = beta.lp_norm(1);
        let eta = (design.x() * &beta).add_scalar(b0);
        let deviance = binomial_deviance(y, &eta);
        if let Some(prev) = path.steps.last() {
            if deviance > prev.deviance + 1e-6 {
                log::debug!("logistic AFS deviance rose from {} to {deviance} at step {m}", prev.deviance);
            }
        }
        path.steps.push(LogisticStep {
            m,
            beta: beta.as_slice().to_vec(),
            intercept: b0,
            chosen: j,
            entered,
            active: active.clone(),
            deviance,
            l1,
        });
        if fit.separable {
            path.stop_reason = LogisticStopReason::Separable;
            return Ok(path);
        }
    }
    if l1 >= h {
        path.stop_reason = LogisticStopReason::L1CapReached;
    }
    Ok(path)
}

/// Penalized logistic fits `(intercept, beta)` down a log-spaced grid of
/// `lambda` (normalized convention, unpenalized intercept), by proximal
/// Newton with coordinate-descent inner solves.
pub fn logistic_lasso_path(
    design: &StandardizedDesign,
    n_lambda: usize,
    lambda_min_ratio: f64,
) -> Result<Vec<(f64, f64, DVector<f64>)>> {
    let y = design.y();
    check_binary(y)?;
    let n = design.n();
    let p = design.p();
    let nf = n as f64;
    let ybar = y.sum() / nf;
    if ybar == 0.0 || ybar == 1.0 {
        return Ok(Vec::new());
    }
    let x = design.x();
    let lmax = x.tr_mul(&y.add_scalar(-ybar)).amax() / nf;
    let mut b0 = logit(ybar);
    let mut beta = DVector::zeros(p);
    let mut out = Vec::with_capacity(n_lambda);
    if lmax == 0.0 {
        out.push((0.0, b0, beta));
        return Ok(out);
    }
    for lambda in lambda_grid(lmax, n_lambda, lambda_min_ratio) {
        let threshold = nf * lambda;
        for _outer in 0..100 {
            let eta = (x * &beta).add_scalar(b0);
            let prob = eta.map(sigmoid);
            let w = prob.map(|v| (v * (1.0 - v)).max(1e-5));
            let zt = DVector::from_fn(n, |i, _| eta[i] + (y[i] - prob[i]) / w[i]);
            let mut r = &zt - &eta;
            let sum_w = w.sum();
            let col_w: Vec<f64> = (0..p)
                .map(|j| x.column(j).iter().zip(w.iter()).map(|(a, wi)| wi * a * a).sum())
                .collect();
            let (old_b0, old_beta) = (b0, beta.clone());
            for _sweep in 0..10_000 {
                let mut change: f64 = 0.0;
                let d0 = r.dot(&w) / sum_w;
                b0 += d0;
                r.add_scalar_mut(-d0);
                change = change.max(d0.abs());
                for j in 0..p {
                    let xj = x.column(j);
                    let g: f64 = xj.iter().zip(w.iter()).zip(r.iter()).map(|((a, wi), ri)| a * wi * ri).sum::<f64>()
                        + col_w[j] * beta[j];
                    let new = soft_threshold(g, threshold) / col_w[j];
                    let d = new - beta[j];
                    if d != 0.0 {
                        r.axpy(-d, &xj, 1.0);
                        beta[j] = new;
                        change = change.max(d.abs());
                    }
                }
                if change < 1e-7 {
                    break;
                }
            }
            let moved = (b0 - old_b0).abs().max((&beta - &old_beta).amax());
            if moved < 1e-6 {
                break;
            }
        }
        out.push((lambda, b0, beta.clone()));
    }
    Ok(out)
}

/// Largest slope l1 norm along the logistic LASSO path to `1e-3 * lambda_max`.
pub fn logistic_max_l1_norm(design: &StandardizedDesign) -> Result<f64> {
    let path = logistic_lasso_path(design, 100, 1e-3)?;
    Ok(path.iter().map(|(_, _, b)| b.lp_norm(1)).fold(0.0, f64::max))
}
