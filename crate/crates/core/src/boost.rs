//! Orthogonal-design oracles: the soft-thresholding approximation to AFS and
//! componentwise L2 boosting.
//!
//! On an orthonormal design AFS shrinks variable `j` after `l` steps in the
//! active set to `(1 - (1 - rho)^l) b_j`, with `b_j` its OLS coefficient. The
//! soft-thresholding estimator applies `sign(b_j) max(|b_j| - lambda, 0)`
//! with a per-variable threshold derived from the RSS drop of the step.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::afs::{afs_fit, AfsConfig};
use crate::error::{Error, Result};
use crate::lasso::soft_threshold;
use crate::linalg::{least_squares, StandardizedDesign};

/// Tolerance on `max |X'X - I|` for a design to count as orthonormal.
pub const ORTHO_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftThresholdStep {
    pub m: usize,
    pub beta: Vec<f64>,
    /// Steps each variable has spent in the active set, `l_{j,m}`.
    pub ell: Vec<usize>,
    /// Threshold per variable; `None` outside the active set.
    pub lambda: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftThresholdPath {
    pub rho: f64,
    pub ols: Vec<f64>,
    pub steps: Vec<SoftThresholdStep>,
    /// Matching AFS coefficients, one vector per step.
    pub afs: Vec<Vec<f64>>,
}

impl SoftThresholdPath {
    /// Largest `|AFS - ST|` over all steps and coordinates.
    pub fn max_gap(&self) -> f64 {
        self.steps
            .iter()
            .zip(&self.afs)
            .flat_map(|(s, a)| s.beta.iter().zip(a).map(|(u, v)| (u - v).abs()))
            .fold(0.0, f64::max)
    }
}

/// `max |X'X - I|`.
pub fn orthogonality_defect(design: &StandardizedDesign) -> f64 {
    let p = design.p();
    let g = design.x().tr_mul(design.x());
    let mut worst: f64 = 0.0;
    for a in 0..p {
        for b in 0..p {
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((g[(a, b)] - target).abs());
        }
    }
    worst
}

/// The interval `[c (1 - rho)^(2 l), c (1 - rho)^2)` with `c = sqrt(1 - (1 - rho)^2)`.
pub fn threshold_bracket(rho: f64, ell: usize) -> (f64, f64) {
    let q = 1.0 - rho;
    let c = (1.0 - q * q).sqrt();
    (c * q.powi(2 * ell as i32), c * q * q)
}

/// `lambda = delta / c`, with `delta^2` the share of the RSS decrement at the
/// current step owed to a variable that has been active for `ell` steps.
pub fn step_threshold(rho: f64, ell: usize, b: f64) -> f64 {
    let q = 1.0 - rho;
    let c2 = 1.0 - q * q;
    let delta2 = q.powi(2 * (ell as i32 - 1)) * c2 * b * b;
    delta2.sqrt() / c2.sqrt()
}

/// Soft-thresholded coefficients along the AFS path of `config`.
///
/// With `allow_nonorthogonal` the OLS coefficients come from the full
/// least-squares fit and the orthonormality check is skipped.
pub fn soft_threshold_path(design: &StandardizedDesign, config: &AfsConfig, allow_nonorthogonal: bool) -> Result<SoftThresholdPath> {
    let p = design.p();
    let ols: DVector<f64> = if allow_nonorthogonal {
        least_squares(design.x(), design.y())
            .ok_or_else(|| Error::InvalidConfig("least-squares fit failed".into()))?
    } else {
        let defect = orthogonality_defect(design);
        if defect > ORTHO_TOL {
            return Err(Error::NonOrthogonalDesign(defect));
        }
        design.x().tr_mul(design.y())
    };
    let path = afs_fit(design, config)?;
    let mut ell = vec![0usize; p];
    let mut active = vec![false; p];
    let mut steps = Vec::with_capacity(path.len());
    for s in &path.steps {
        for &j in &s.active {
            active[j] = true;
        }
        for j in 0..p {
            if active[j] {
                ell[j] += 1;
            }
        }
        let lambda: Vec<Option<f64>> = (0..p)
            .map(|j| active[j].then(|| step_threshold(config.rho, ell[j], ols[j])))
            .collect();
        let beta = (0..p)
            .map(|j| lambda[j].map(|l| soft_threshold(ols[j], l)).unwrap_or(0.0))
            .collect();
        steps.push(SoftThresholdStep {
            m: s.m,
            beta,
            ell: ell.clone(),
            lambda,
        });
    }
    Ok(SoftThresholdPath {
        rho: config.rho,
        ols: ols.as_slice().to_vec(),
        steps,
        afs: path.steps.iter().map(|s| s.beta.clone()).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostPath {
    pub nu: f64,
    pub betas: Vec<Vec<f64>>,
    pub chosen: Vec<usize>,
}

/// Componentwise L2 boosting: pick the column with the largest `|x_j'r|` and
/// add `nu * x_j'r / ||x_j||^2` to its coefficient.
pub fn l2boost_fit(design: &StandardizedDesign, nu: f64, max_steps: usize) -> Result<BoostPath> {
    if !(nu > 0.0 && nu <= 1.0) {
        return Err(Error::InvalidConfig(format!("nu must lie in (0, 1], got {nu}")));
    }
    let x = design.x();
    let p = design.p();
    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared()).collect();
    let mut beta = DVector::zeros(p);
    let mut resid = design.y().clone();
    let mut out = BoostPath {
        nu,
        betas: Vec::with_capacity(max_steps),
        chosen: Vec::with_capacity(max_steps),
    };
    for _ in 0..max_steps {
        let corr = x.tr_mul(&resid);
        let j = corr.iamax();
        let step = nu * corr[j] / col_sq[j];
        beta[j] += step;
        resid.axpy(-step, &x.column(j), 1.0);
        out.betas.push(beta.as_slice().to_vec());
        out.chosen.push(j);
    }
    Ok(out)
}
