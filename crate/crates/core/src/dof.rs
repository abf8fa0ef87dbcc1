//! Parametric-bootstrap estimate of degrees of freedom,
//! `dof = sum_i Cov(y_i, yhat_i) / sigma^2`.
//!
//! Draw `b` uses its own generator seeded from `(seed, b)`, so the estimate
//! does not depend on how the draws are scheduled across threads.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afs::{afs_fit, AfsConfig};
use crate::error::{Error, Result};
use crate::lasso::lasso_fit;
use crate::linalg::{standardize, StandardizedDesign};
use crate::sim::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DofEstimate {
    pub rho: Option<f64>,
    pub steps: Option<usize>,
    pub dof: f64,
    /// Monte-Carlo standard error of `dof`.
    pub se: f64,
    /// Average number of nonzero coefficients across draws.
    pub mean_support: f64,
    /// Monte-Carlo standard error of `mean_support`.
    pub support_se: f64,
    pub b: usize,
    pub sigma: f64,
}

/// A fitting procedure as seen by the bootstrap: fitted values and the
/// support size for a response vector.
pub trait Smoother: Sync {
    fn smooth(&self, y: &DVector<f64>) -> Result<(DVector<f64>, usize)>;
}

impl<F> Smoother for F
where
    F: Fn(&DVector<f64>) -> Result<(DVector<f64>, usize)> + Sync,
{
    fn smooth(&self, y: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
        self(y)
    }
}

/// `yhat = H y` for a fixed matrix `H`.
pub struct LinearSmoother(pub DMatrix<f64>);

impl Smoother for LinearSmoother {
    fn smooth(&self, y: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
        Ok((&self.0 * y, self.0.ncols()))
    }
}

/// AFS with fixed `rho` stopped after `steps` steps on raw predictors `x`.
pub struct AfsSmoother {
    pub x: DMatrix<f64>,
    pub config: AfsConfig,
}

impl Smoother for AfsSmoother {
    fn smooth(&self, y: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
        let d = standardize(&self.x, y, true)?;
        let path = afs_fit(&d, &self.config)?;
        let beta = path.coefficients(self.config.max_steps);
        Ok(fitted(&d, &beta))
    }
}

/// LASSO at a fixed penalty (normalized convention) on raw predictors `x`.
pub struct LassoSmoother {
    pub x: DMatrix<f64>,
    pub lambda: f64,
}

impl Smoother for LassoSmoother {
    fn smooth(&self, y: &DVector<f64>) -> Result<(DVector<f64>, usize)> {
        let d = standardize(&self.x, y, true)?;
        let beta = lasso_fit(&d, self.lambda)?;
        Ok(fitted(&d, &beta))
    }
}

fn fitted(d: &StandardizedDesign, beta: &DVector<f64>) -> (DVector<f64>, usize) {
    let yhat = (d.x() * beta).add_scalar(d.y_mean());
    (yhat, beta.iter().filter(|b| **b != 0.0).count())
}

/// Bootstrap dof of `smoother` around the true mean `mu` with noise sd `sigma`.
pub fn bootstrap_dof<S: Smoother + ?Sized>(mu: &DVector<f64>, sigma: f64, b: usize, seed: u64, smoother: &S) -> Result<DofEstimate> {
    if b < 100 {
        return Err(Error::InvalidConfig(format!("need at least 100 bootstrap draws, got {b}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    let n = mu.len();
    let draws: Vec<(DVector<f64>, DVector<f64>, usize)> = (0..b)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[k as u64]));
            let eps = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
            let y = mu + eps.scale(sigma);
            let (yhat, support) = smoother.smooth(&y)?;
            Ok((y, yhat, support))
        })
        .collect::<Result<Vec<_>>>()?;

    let bf = b as f64;
    let mut ybar = DVector::zeros(n);
    let mut fbar = DVector::zeros(n);
    for (y, f, _) in &draws {
        ybar += y;
        fbar += f;
    }
    ybar /= bf;
    fbar /= bf;
    // per-draw contributions T_b; their mean over (b - 1) is the sample covariance sum
    let t: Vec<f64> = draws
        .iter()
        .map(|(y, f, _)| (y - &ybar).dot(&(f - &fbar)) / (sigma * sigma))
        .collect();
    let dof = t.iter().sum::<f64>() / (bf - 1.0);
    let se = crate::sim::std_dev(&t) / bf.sqrt();
    let supports: Vec<f64> = draws.iter().map(|(_, _, s)| *s as f64).collect();
    Ok(DofEstimate {
        rho: None,
        steps: None,
        dof,
        se,
        mean_support: supports.iter().sum::<f64>() / bf,
        support_se: crate::sim::std_dev(&supports) / bf.sqrt(),
        b,
        sigma,
    })
}

/// [`bootstrap_dof`] for AFS, recording `rho` and the step budget.
pub fn afs_dof(x: &DMatrix<f64>, mu: &DVector<f64>, sigma: f64, config: &AfsConfig, b: usize, seed: u64) -> Result<DofEstimate> {
    let smoother = AfsSmoother {
        x: x.clone(),
        config: *config,
    };
    let mut est = bootstrap_dof(mu, sigma, b, seed, &smoother)?;
    est.rho = Some(config.rho);
    est.steps = Some(config.max_steps);
    Ok(est)
}
