//! K-fold cross-validation over `(rho, m)` and `lambda` grids.
//!
//! Folds come from a seeded permutation cut into contiguous blocks. Each
//! training portion is standardized on its own rows only and the held-out
//! rows are mapped through that transform.
//!
//! LASSO penalties are reported in the convention of the full-data design.
//! Fold designs have unit-norm columns over fewer rows, so each fold solves
//! at `lambda * sqrt(n / n_train)`, which is the same penalty on the
//! unit-variance scale.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::afs::{afs_fit, afs_fit_with_cap, resolve_l1_cap, AfsConfig, L1Cap};
use crate::error::{Error, Result};
use crate::lasso::{lambda_grid, lambda_max, lasso_fit, lasso_path_at};
use crate::linalg::{StandardizeOptions, StandardizedDesign};
use crate::logistic::{
    afs_logistic_fit, afs_logistic_fit_with_cap, binomial_deviance, logistic_design,
    resolve_logistic_cap,
};
use crate::models::FittedModel;

pub const DEFAULT_RHO_GRID: [f64; 7] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0];
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Fitter {
    Afs {
        rho_grid: Vec<f64>,
        max_steps: usize,
        l1_cap: L1Cap,
    },
    Fs {
        max_steps: usize,
        l1_cap: L1Cap,
    },
    Lasso {
        n_lambda: usize,
        lambda_min_ratio: f64,
    },
    LogisticAfs {
        rho_grid: Vec<f64>,
        max_steps: usize,
        l1_cap: L1Cap,
    },
}

impl Fitter {
    pub fn afs(max_steps: usize) -> Self {
        Fitter::Afs {
            rho_grid: DEFAULT_RHO_GRID.to_vec(),
            max_steps,
            l1_cap: L1Cap::Auto,
        }
    }

    pub fn fs(max_steps: usize) -> Self {
        Fitter::Fs {
            max_steps,
            l1_cap: L1Cap::Auto,
        }
    }

    pub fn lasso() -> Self {
        Fitter::Lasso {
            n_lambda: 100,
            lambda_min_ratio: 1e-3,
        }
    }

    pub fn logistic_afs(max_steps: usize) -> Self {
        Fitter::LogisticAfs {
            rho_grid: DEFAULT_RHO_GRID.to_vec(),
            max_steps,
            l1_cap: L1Cap::Auto,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Fitter::Afs { rho_grid, max_steps, l1_cap } | Fitter::LogisticAfs { rho_grid, max_steps, l1_cap } => {
                if rho_grid.is_empty() {
                    return Err(Error::InvalidConfig("rho grid is empty".into()));
                }
                for &rho in rho_grid {
                    AfsConfig::new(rho, *max_steps).with_l1_cap(*l1_cap).validate()?;
                }
                Ok(())
            }
            Fitter::Fs { max_steps, l1_cap } => AfsConfig::forward_stepwise(*max_steps).with_l1_cap(*l1_cap).validate(),
            Fitter::Lasso { n_lambda, lambda_min_ratio } => {
                if *n_lambda < 2 || !(*lambda_min_ratio > 0.0 && *lambda_min_ratio < 1.0) {
                    return Err(Error::InvalidConfig(
                        "lasso grid needs n_lambda >= 2 and 0 < lambda_min_ratio < 1".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// One candidate model. AFS-type points carry `rho` and `step`, LASSO points `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rho: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub fitter: Fitter,
    pub grid: Vec<GridPoint>,
    /// Mean held-out loss per observation (squared error or binomial deviance).
    pub cv_mean: Vec<f64>,
    /// Standard error of the per-fold mean losses.
    pub cv_se: Vec<f64>,
    /// Index into `grid`.
    pub selected: usize,
    pub folds: usize,
    pub seed: u64,
}

impl CvReport {
    pub fn selected_point(&self) -> GridPoint {
        self.grid[self.selected]
    }
}

/// Fold label of every row: a seeded permutation split into `k` contiguous blocks.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    perm.shuffle(&mut rng);
    let mut fold = vec![0; n];
    for (pos, &row) in perm.iter().enumerate() {
        fold[row] = pos * k / n;
    }
    fold
}

fn rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

fn entries(y: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| y[idx[i]])
}

fn gaussian_design(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<StandardizedDesign> {
    StandardizedDesign::new(x, y, StandardizeOptions::default())
}

/// The candidate grid for `fitter` on the full data.
fn build_grid(x: &DMatrix<f64>, y: &DVector<f64>, fitter: &Fitter) -> Result<Vec<GridPoint>> {
    let afs_points = |rhos: &[f64], max_steps: usize| -> Vec<GridPoint> {
        rhos.iter()
            .flat_map(|&rho| {
                (0..=max_steps).map(move |m| GridPoint {
                    rho: Some(rho),
                    step: Some(m),
                    lambda: None,
                })
            })
            .collect()
    };
    Ok(match fitter {
        Fitter::Afs { rho_grid, max_steps, .. } | Fitter::LogisticAfs { rho_grid, max_steps, .. } => {
            afs_points(rho_grid, *max_steps)
        }
        Fitter::Fs { max_steps, .. } => afs_points(&[1.0], *max_steps),
        Fitter::Lasso { n_lambda, lambda_min_ratio } => {
            let design = gaussian_design(x, y)?;
            lambda_grid(lambda_max(&design), *n_lambda, *lambda_min_ratio)
                .into_iter()
                .map(|lambda| GridPoint {
                    rho: None,
                    step: None,
                    lambda: Some(lambda),
                })
                .collect()
        }
    })
}

/// Summed held-out loss at every grid point for one fold.
fn fold_losses(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    fitter: &Fitter,
    grid: &[GridPoint],
    train: &[usize],
    test: &[usize],
) -> Result<Vec<f64>> {
    let n = x.nrows();
    let x_train = rows(x, train);
    let y_train = entries(y, train);
    let x_test = rows(x, test);
    let y_test = entries(y, test);

    let sq_loss = |pred: &DVector<f64>| -> f64 { (pred - &y_test).norm_squared() };

    match fitter {
        Fitter::Afs { l1_cap, .. } | Fitter::Fs { l1_cap, .. } => {
            let design = gaussian_design(&x_train, &y_train)?;
            let xt = design.transform(&x_test)?;
            let h = resolve_l1_cap(&design, *l1_cap)?;
            let mut out = Vec::with_capacity(grid.len());
            let mut current: Option<(f64, crate::afs::AfsPath)> = None;
            for point in grid {
                let rho = point.rho.expect("afs grid point");
                let m = point.step.expect("afs grid point");
                if current.as_ref().map(|(r, _)| *r != rho).unwrap_or(true) {
                    let max_steps = grid
                        .iter()
                        .filter(|g| g.rho == Some(rho))
                        .filter_map(|g| g.step)
                        .max()
                        .unwrap_or(0)
                        .max(1);
                    let config = AfsConfig::new(rho, max_steps).with_l1_cap(*l1_cap);
                    current = Some((rho, afs_fit_with_cap(&design, &config, h)?));
                }
                let path = &current.as_ref().expect("path computed").1;
                let pred = (&xt * path.coefficients(m)).add_scalar(design.y_mean());
                out.push(sq_loss(&pred));
            }
            Ok(out)
        }
        Fitter::Lasso { .. } => {
            let design = gaussian_design(&x_train, &y_train)?;
            let xt = design.transform(&x_test)?;
            let scale = (n as f64 / train.len() as f64).sqrt();
            let lambdas: Vec<f64> = grid
                .iter()
                .map(|g| g.lambda.expect("lasso grid point") * scale)
                .collect();
            let path = lasso_path_at(&design, &lambdas)?;
            Ok((0..path.len())
                .map(|k| sq_loss(&(&xt * path.beta(k)).add_scalar(design.y_mean())))
                .collect())
        }
        Fitter::LogisticAfs { l1_cap, .. } => {
            let design = logistic_design(&x_train, &y_train)?;
            let xt = design.transform(&x_test)?;
            let h = resolve_logistic_cap(&design, *l1_cap)?;
            let mut out = Vec::with_capacity(grid.len());
            let mut current: Option<(f64, crate::logistic::LogisticAfsPath)> = None;
            for point in grid {
                let rho = point.rho.expect("afs grid point");
                let m = point.step.expect("afs grid point");
                if current.as_ref().map(|(r, _)| *r != rho).unwrap_or(true) {
                    let max_steps = grid
                        .iter()
                        .filter(|g| g.rho == Some(rho))
                        .filter_map(|g| g.step)
                        .max()
                        .unwrap_or(0)
                        .max(1);
                    let config = AfsConfig::new(rho, max_steps).with_l1_cap(*l1_cap);
                    current = Some((rho, afs_logistic_fit_with_cap(&design, &config, h)?));
                }
                let path = &current.as_ref().expect("path computed").1;
                let (b0, beta) = path.coefficients(m);
                let eta = (&xt * beta).add_scalar(b0);
                out.push(binomial_deviance(&y_test, &eta));
            }
            Ok(out)
        }
    }
}

/// Runs `k`-fold cross-validation of `fitter` on raw data `(x, y)`.
///
/// The selected point minimizes the mean held-out loss; exact ties go to
/// the sparser model (fewer steps, or larger penalty).
pub fn kfold_cv(x: &DMatrix<f64>, y: &DVector<f64>, fitter: &Fitter, k: usize, seed: u64) -> Result<CvReport> {
    fitter.validate()?;
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "x has {n} rows but y has {} entries",
            y.len()
        )));
    }
    if k < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {k}")));
    }
    if k > n {
        return Err(Error::FoldTooSmall(format!("{k} folds for {n} rows")));
    }
    let folds = fold_assignment(n, k, seed);
    let max_fold = (0..k)
        .map(|f| folds.iter().filter(|&&g| g == f).count())
        .max()
        .unwrap_or(0);
    if n - max_fold < 2 {
        return Err(Error::FoldTooSmall(format!(
            "training portion has {} rows",
            n - max_fold
        )));
    }

    let grid = build_grid(x, y, fitter)?;
    let per_fold: Vec<(usize, Vec<f64>)> = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
            fold_losses(x, y, fitter, &grid, &train, &test).map(|l| (test.len(), l))
        })
        .collect::<Result<Vec<_>>>()?;

    let g = grid.len();
    let mut cv_mean = vec![0.0; g];
    let mut cv_se = vec![0.0; g];
    for idx in 0..g {
        let total: f64 = per_fold.iter().map(|(_, l)| l[idx]).sum();
        cv_mean[idx] = total / n as f64;
        let means: Vec<f64> = per_fold.iter().map(|(m, l)| l[idx] / *m as f64).collect();
        let mu = means.iter().sum::<f64>() / k as f64;
        let var = means.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (k - 1) as f64;
        cv_se[idx] = (var / k as f64).sqrt();
    }

    let selected = select_sparsest_minimum(&grid, &cv_mean);
    Ok(CvReport {
        fitter: fitter.clone(),
        grid,
        cv_mean,
        cv_se,
        selected,
        folds: k,
        seed,
    })
}

fn select_sparsest_minimum(grid: &[GridPoint], cv_mean: &[f64]) -> usize {
    let best = cv_mean
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::INFINITY, f64::min);
    let complexity = |i: usize| -> usize { grid[i].step.unwrap_or(i) };
    (0..grid.len())
        .filter(|&i| cv_mean[i] == best)
        .min_by_key(|&i| (complexity(i), i))
        .unwrap_or(0)
}

/// Refits `fitter` on the full data at `point`; AFS keeps the step count `m`
/// chosen on the folds.
pub fn refit(x: &DMatrix<f64>, y: &DVector<f64>, fitter: &Fitter, point: &GridPoint) -> Result<FittedModel> {
    match fitter {
        Fitter::Afs { l1_cap, .. } | Fitter::Fs { l1_cap, .. } => {
            let design = gaussian_design(x, y)?;
            let rho = point.rho.unwrap_or(1.0);
            let m = point.step.unwrap_or(0);
            if m == 0 {
                return Ok(FittedModel::from_standardized(&design, &DVector::zeros(design.p())));
            }
            let path = afs_fit(&design, &AfsConfig::new(rho, m).with_l1_cap(*l1_cap))?;
            Ok(FittedModel::from_standardized(&design, &path.coefficients(m)))
        }
        Fitter::Lasso { .. } => {
            let design = gaussian_design(x, y)?;
            let lambda = point
                .lambda
                .ok_or_else(|| Error::InvalidConfig("lasso refit needs lambda".into()))?;
            Ok(FittedModel::from_standardized(&design, &lasso_fit(&design, lambda)?))
        }
        Fitter::LogisticAfs { l1_cap, .. } => {
            let design = logistic_design(x, y)?;
            let rho = point.rho.unwrap_or(1.0);
            let m = point.step.unwrap_or(0);
            let path = afs_logistic_fit(&design, &AfsConfig::new(rho, m.max(1)).with_l1_cap(*l1_cap))?;
            Ok(path.model(&design, m))
        }
    }
}
