//! Coordinate-descent LASSO path.
//!
//! Internally the objective is `(1/2n)||y - X beta||^2 + lambda ||beta||_1`, so
//! `lambda_max = max_j |x_j'y| / n` does not grow with `n`. The un-normalized
//! penalty of `||y - X beta||^2 + lambda' ||beta||_1` is `lambda' = 2 n lambda`;
//! see [`unnormalized_lambda`].

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{select_columns, GramState, StandardizedDesign};

/// Convergence tolerance on the largest coefficient change in a sweep.
pub const CD_TOL: f64 = 1e-9;
/// Cap on coordinate sweeps (full and active-set) per lambda.
pub const CD_MAX_SWEEPS: usize = 100_000;

/// Active-set sweeps before the first exact solve on the support.
const POLISH_AFTER: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    /// Decreasing penalty values (normalized convention).
    pub lambdas: Vec<f64>,
    /// Standardized-scale coefficients, one vector per lambda.
    pub betas: Vec<Vec<f64>>,
    pub n: usize,
}

impl LassoPath {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn beta(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.betas[k])
    }

    pub fn l1_norms(&self) -> Vec<f64> {
        self.betas
            .iter()
            .map(|b| b.iter().map(|v| v.abs()).sum())
            .collect()
    }
}

/// `sign(z) * max(|z| - gamma, 0)`.
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Converts a normalized-convention penalty to the `||y - X b||^2 + lambda' ||b||_1` scale.
pub fn unnormalized_lambda(lambda: f64, n: usize) -> f64 {
    2.0 * n as f64 * lambda
}

/// Smallest penalty at which the solution is identically zero.
pub fn lambda_max(design: &StandardizedDesign) -> f64 {
    design.x().tr_mul(design.y()).amax() / design.n() as f64
}

/// `n_lambda` log-spaced values from `lambda_max` down to `lambda_max * ratio`.
pub fn lambda_grid(lambda_max: f64, n_lambda: usize, ratio: f64) -> Vec<f64> {
    if n_lambda == 1 {
        return vec![lambda_max];
    }
    let lo = ratio.ln();
    (0..n_lambda)
        .map(|k| lambda_max * (lo * k as f64 / (n_lambda - 1) as f64).exp())
        .collect()
}

/// LASSO path on a log-spaced grid, warm-started from `lambda_max` downwards.
pub fn lasso_path(design: &StandardizedDesign, n_lambda: usize, lambda_min_ratio: f64) -> Result<LassoPath> {
    if n_lambda < 2 {
        return Err(Error::InvalidConfig("n_lambda must be at least 2".into()));
    }
    if !(lambda_min_ratio > 0.0 && lambda_min_ratio < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "lambda_min_ratio must lie in (0, 1), got {lambda_min_ratio}"
        )));
    }
    let grid = lambda_grid(lambda_max(design), n_lambda, lambda_min_ratio);
    lasso_path_at(design, &grid)
}

/// LASSO solutions at the given non-increasing penalties.
pub fn lasso_path_at(design: &StandardizedDesign, lambdas: &[f64]) -> Result<LassoPath> {
    if lambdas.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::InvalidConfig("lambdas must be non-increasing".into()));
    }
    let mut solver = CoordinateDescent::new(design);
    let mut betas = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        solver.solve(lambda)?;
        betas.push(solver.beta.as_slice().to_vec());
    }
    Ok(LassoPath {
        lambdas: lambdas.to_vec(),
        betas,
        n: design.n(),
    })
}

/// Solution at a single penalty, started from zero.
pub fn lasso_fit(design: &StandardizedDesign, lambda: f64) -> Result<DVector<f64>> {
    let mut solver = CoordinateDescent::new(design);
    solver.solve(lambda)?;
    Ok(solver.beta)
}

/// Largest KKT violation of `beta` at `lambda`, measured on `x_j'(y - X beta)`.
pub fn kkt_violation(design: &StandardizedDesign, lambda: f64, beta: &DVector<f64>) -> f64 {
    let g = design.correlations(beta);
    let t = design.n() as f64 * lambda;
    g.iter()
        .zip(beta.iter())
        .map(|(&gj, &bj)| {
            if bj == 0.0 {
                (gj.abs() - t).max(0.0)
            } else {
                (gj - t * bj.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// `(1/2n)||y - X beta||^2 + lambda ||beta||_1`.
pub fn objective(design: &StandardizedDesign, lambda: f64, beta: &DVector<f64>) -> f64 {
    let n = design.n() as f64;
    design.residual(beta).norm_squared() / (2.0 * n) + lambda * beta.lp_norm(1)
}

/// Fraction of `||y||^2` left unexplained at which a `p >= n - 1` path stops.
pub const SATURATION_RSS: f64 = 1e-3;

/// The maximum l1 norm reached along the LASSO path, evaluated down to
/// `1e-4 * lambda_max`. Used as the early-stopping bound of AFS.
///
/// When `p >= n - 1` the design can interpolate the centered response and
/// the far end of the path is both meaningless and numerically out of reach,
/// so the walk down the grid stops at the first penalty whose fit leaves
/// less than [`SATURATION_RSS`] of `||y||^2` unexplained.
pub fn max_l1_norm(design: &StandardizedDesign) -> Result<f64> {
    let lmax = lambda_max(design);
    if lmax == 0.0 {
        return Ok(0.0);
    }
    let saturating = design.p() + 1 >= design.n();
    let floor = SATURATION_RSS * design.y().norm_squared();
    let mut solver = CoordinateDescent::new(design);
    let mut h: f64 = 0.0;
    for lambda in lambda_grid(lmax, 100, 1e-4) {
        solver.solve(lambda)?;
        h = h.max(solver.beta.lp_norm(1));
        if saturating && solver.resid.norm_squared() <= floor {
            log::debug!("lasso path saturated at lambda = {lambda:.3e}");
            break;
        }
    }
    if design.n() > design.p() {
        let all: Vec<usize> = (0..design.p()).collect();
        if let Ok(ols) = GramState::from_active(design, &all).and_then(|g| g.active_ols()) {
            let ols_l1 = ols.lp_norm(1);
            if (h - ols_l1).abs() > 0.01 * ols_l1 {
                log::info!("lasso l1 bound {h:.6} differs from OLS l1 {ols_l1:.6} by more than 1%");
            }
        }
    }
    Ok(h)
}

struct CoordinateDescent<'a> {
    design: &'a StandardizedDesign,
    beta: DVector<f64>,
    resid: DVector<f64>,
    col_sq: Vec<f64>,
}

impl<'a> CoordinateDescent<'a> {
    fn new(design: &'a StandardizedDesign) -> Self {
        let p = design.p();
        Self {
            design,
            beta: DVector::zeros(p),
            resid: design.y().clone(),
            col_sq: (0..p).map(|j| design.x().column(j).norm_squared()).collect(),
        }
    }

    fn update(&mut self, j: usize, threshold: f64) -> f64 {
        let xj = self.design.x().column(j);
        let old = self.beta[j];
        let z = xj.dot(&self.resid) + old * self.col_sq[j];
        let new = soft_threshold(z, threshold) / self.col_sq[j];
        let delta = new - old;
        if delta != 0.0 {
            self.resid.axpy(-delta, &xj, 1.0);
            self.beta[j] = new;
        }
        delta.abs()
    }

    /// Active-set refinement started from the current iterate. On the
    /// support with fixed signs the stationarity equations are solved
    /// exactly; a coefficient that would change sign stops the move at its
    /// zero crossing and leaves the support, and once the support is
    /// stationary the variable with the largest KKT violation joins with the
    /// sign of its correlation. Every move lowers the objective. Returns true
    /// when all KKT conditions hold; the caller still confirms with a sweep.
    fn polish(&mut self, threshold: f64) -> bool {
        let x = self.design.x();
        let (n, p) = (self.design.n(), self.design.p());
        let mut support: Vec<usize> = (0..p).filter(|&j| self.beta[j] != 0.0).collect();
        let mut signs: Vec<f64> = support.iter().map(|&j| self.beta[j].signum()).collect();
        let mut just_added = None;
        for _ in 0..4 * p {
            if support.is_empty() || support.len() >= n {
                return false;
            }
            let xa = select_columns(x, &support);
            let rhs = DVector::from_fn(support.len(), |c, _| x.column(support[c]).dot(self.design.y()) - threshold * signs[c]);
            let Some(chol) = xa.tr_mul(&xa).cholesky() else {
                return false;
            };
            let target = chol.solve(&rhs);
            let mut t = 1.0;
            let mut leaving = None;
            for (c, &j) in support.iter().enumerate() {
                if target[c].signum() != signs[c] {
                    let cross = self.beta[j] / (self.beta[j] - target[c]);
                    if cross < t {
                        t = cross;
                        leaving = Some(c);
                    }
                }
            }
            if leaving.is_some() && leaving == just_added {
                return false;
            }
            just_added = None;
            for (c, &j) in support.iter().enumerate() {
                self.beta[j] += t * (target[c] - self.beta[j]);
            }
            if let Some(c) = leaving {
                self.beta[support[c]] = 0.0;
                support.remove(c);
                signs.remove(c);
            }
            self.resid = self.design.residual(&self.beta);
            if leaving.is_some() {
                continue;
            }
            let mut worst = threshold * (1.0 + 1e-12);
            let mut entering = None;
            for j in (0..p).filter(|j| !support.contains(j)) {
                let g = x.column(j).dot(&self.resid);
                if g.abs() > worst {
                    worst = g.abs();
                    entering = Some((j, g.signum()));
                }
            }
            let Some((j, s)) = entering else {
                return true;
            };
            just_added = Some(support.len());
            support.push(j);
            signs.push(s);
        }
        false
    }

    /// Alternates full sweeps with sweeps over the current nonzero set. Long
    /// runs over a fixed support are cut short by [`Self::polish`].
    fn solve(&mut self, lambda: f64) -> Result<()> {
        let p = self.design.p();
        let threshold = self.design.n() as f64 * lambda;
        let mut sweeps = 0;
        loop {
            let mut max_change: f64 = 0.0;
            for j in 0..p {
                max_change = max_change.max(self.update(j, threshold));
            }
            sweeps += 1;
            if max_change < CD_TOL {
                return Ok(());
            }
            let active: Vec<usize> = (0..p).filter(|&j| self.beta[j] != 0.0).collect();
            let mut inner = 0usize;
            let mut next_polish = POLISH_AFTER;
            loop {
                let mut change: f64 = 0.0;
                for &j in &active {
                    change = change.max(self.update(j, threshold));
                }
                sweeps += 1;
                inner += 1;
                if change < CD_TOL {
                    break;
                }
                if inner == next_polish {
                    if self.polish(threshold) {
                        break;
                    }
                    next_polish *= 2;
                }
                if sweeps >= CD_MAX_SWEEPS {
                    return Err(Error::NoConvergence { lambda });
                }
            }
            if sweeps >= CD_MAX_SWEEPS {
                return Err(Error::NoConvergence { lambda });
            }
        }
    }
}
