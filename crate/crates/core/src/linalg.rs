//! Data standardization and the incremental active-set least-squares kernel.
//!
//! Every fitter works on a [`StandardizedDesign`]: columns are centered (and by
//! default scaled to unit Euclidean norm) so no intercept enters the fit. The
//! stored means and scales map coefficients back to the original units.
//!
//! [`GramState`] keeps `(X_A' X_A)^{-1}` for a growing active set `A`. Adding a
//! column uses the bordering (block-inverse) formula, `O(n|A| + |A|^2)` work
//! instead of refactoring from scratch.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold on the Schur complement below which a new column is
/// treated as lying in the span of the active columns.
pub const SINGULAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StandardizeOptions {
    /// Scale every centered column to unit Euclidean norm.
    pub unit_norm: bool,
    /// Subtract the response mean. Logistic fits keep the raw 0/1 response.
    pub center_response: bool,
}

impl Default for StandardizeOptions {
    fn default() -> Self {
        Self {
            unit_norm: true,
            center_response: true,
        }
    }
}

/// Centered (optionally unit-norm) design with the metadata needed to report
/// coefficients on the original scale.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedDesign {
    x: DMatrix<f64>,
    y: DVector<f64>,
    col_means: DVector<f64>,
    col_scales: DVector<f64>,
    y_mean: f64,
    standardized: bool,
    response_centered: bool,
}

/// Centers `x_raw` and `y_raw`; with `unit_norm` also scales columns to unit norm.
pub fn standardize(
    x_raw: &DMatrix<f64>,
    y_raw: &DVector<f64>,
    unit_norm: bool,
) -> Result<StandardizedDesign> {
    StandardizedDesign::new(
        x_raw,
        y_raw,
        StandardizeOptions {
            unit_norm,
            center_response: true,
        },
    )
}

impl StandardizedDesign {
    pub fn new(
        x_raw: &DMatrix<f64>,
        y_raw: &DVector<f64>,
        opts: StandardizeOptions,
    ) -> Result<Self> {
        let (n, p) = x_raw.shape();
        if y_raw.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "x has {n} rows but y has {} entries",
                y_raw.len()
            )));
        }
        if n < 2 {
            return Err(Error::DimensionMismatch(format!(
                "need at least 2 rows, got {n}"
            )));
        }
        if p == 0 {
            return Err(Error::DimensionMismatch("design has no columns".into()));
        }

        let mut x = x_raw.clone();
        let mut col_means = DVector::zeros(p);
        let mut col_scales = DVector::from_element(p, 1.0);
        for j in 0..p {
            let raw_norm = x_raw.column(j).norm();
            let mean = x_raw.column(j).sum() / n as f64;
            let mut col = x.column_mut(j);
            col.add_scalar_mut(-mean);
            let norm = col.norm();
            if norm <= 1e-12 * raw_norm || norm == 0.0 {
                return Err(Error::ConstantColumn(j));
            }
            if opts.unit_norm {
                col.unscale_mut(norm);
                col_scales[j] = norm;
            }
            col_means[j] = mean;
        }

        let y_mean = if opts.center_response {
            y_raw.sum() / n as f64
        } else {
            0.0
        };
        let y = y_raw.add_scalar(-y_mean);

        Ok(Self {
            x,
            y,
            col_means,
            col_scales,
            y_mean,
            standardized: opts.unit_norm,
            response_centered: opts.center_response,
        })
    }

    /// Wraps a design whose columns are already centered, without rescaling.
    /// Means are zero and scales one, so coefficients are reported unchanged.
    pub fn from_centered(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let opts = StandardizeOptions {
            unit_norm: false,
            center_response: true,
        };
        let d = Self::new(&x, &y, opts)?;
        let n = x.nrows() as f64;
        let max_mean = d.col_means.amax();
        if max_mean > 1e-10 * (1.0 + x.amax()) * n.sqrt() {
            return Err(Error::InvalidConfig(format!(
                "columns are not centered (max |mean| = {max_mean:.3e})"
            )));
        }
        Ok(Self {
            x,
            y: d.y,
            col_means: DVector::zeros(d.col_means.len()),
            col_scales: DVector::from_element(d.col_means.len(), 1.0),
            y_mean: d.y_mean,
            standardized: false,
            response_centered: true,
        })
    }

    /// Same predictors, new response. The response is centered when the
    /// original one was.
    pub fn with_response(&self, y_raw: &DVector<f64>) -> Result<Self> {
        if y_raw.len() != self.n() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} responses, got {}",
                self.n(),
                y_raw.len()
            )));
        }
        let y_mean = if self.response_centered {
            y_raw.sum() / self.n() as f64
        } else {
            0.0
        };
        Ok(Self {
            x: self.x.clone(),
            y: y_raw.add_scalar(-y_mean),
            col_means: self.col_means.clone(),
            col_scales: self.col_scales.clone(),
            y_mean,
            standardized: self.standardized,
            response_centered: self.response_centered,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn col_means(&self) -> &DVector<f64> {
        &self.col_means
    }

    pub fn col_scales(&self) -> &DVector<f64> {
        &self.col_scales
    }

    pub fn y_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// `y - X beta`.
    pub fn residual(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.y - &self.x * beta
    }

    /// `X' (y - X beta)`, the vector of inner products the selection step scans.
    pub fn correlations(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.x.tr_mul(&self.residual(beta))
    }

    /// Maps standardized-scale coefficients to `(intercept, beta)` on the
    /// original scale.
    pub fn to_original_scale(&self, beta: &DVector<f64>) -> (f64, DVector<f64>) {
        let orig = beta.component_div(&self.col_scales);
        let intercept = self.y_mean - self.col_means.dot(&orig);
        (intercept, orig)
    }

    /// Applies the stored centering and scaling to new raw rows.
    pub fn transform(&self, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_new.ncols() != self.p() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} columns, got {}",
                self.p(),
                x_new.ncols()
            )));
        }
        let mut out = x_new.clone();
        for j in 0..self.p() {
            let mut col = out.column_mut(j);
            col.add_scalar_mut(-self.col_means[j]);
            col.unscale_mut(self.col_scales[j]);
        }
        Ok(out)
    }
}

/// Inverse Gram matrix of the active columns, grown one column at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct GramState {
    active: Vec<usize>,
    gram_inv: DMatrix<f64>,
    xty: DVector<f64>,
}

impl Default for GramState {
    fn default() -> Self {
        Self::new()
    }
}

impl GramState {
    pub fn new() -> Self {
        Self {
            active: Vec::new(),
            gram_inv: DMatrix::zeros(0, 0),
            xty: DVector::zeros(0),
        }
    }

    /// Builds the state for `active` by repeated extension.
    pub fn from_active(design: &StandardizedDesign, active: &[usize]) -> Result<Self> {
        let mut state = Self::new();
        for &j in active {
            state.extend(design, j)?;
        }
        Ok(state)
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn gram_inv(&self) -> &DMatrix<f64> {
        &self.gram_inv
    }

    pub fn xty(&self) -> &DVector<f64> {
        &self.xty
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.active.contains(&j)
    }

    /// Returns a copy with column `j` appended.
    pub fn extended(&self, design: &StandardizedDesign, j: usize) -> Result<Self> {
        let mut next = self.clone();
        next.extend(design, j)?;
        Ok(next)
    }

    /// Appends column `j` in place using the bordering formula
    ///
    /// ```text
    /// [A   b]^-1   [A^-1 + u u'/s   -u/s]
    /// [b'  c]    = [-u'/s            1/s]    u = A^-1 b,  s = c - b'u
    /// ```
    ///
    /// The state is left untouched on error.
    pub fn extend(&mut self, design: &StandardizedDesign, j: usize) -> Result<()> {
        if j >= design.p() {
            return Err(Error::DimensionMismatch(format!(
                "column {j} out of range for p = {}",
                design.p()
            )));
        }
        if self.contains(j) {
            return Err(Error::InvalidConfig(format!("column {j} already active")));
        }
        let x = design.x();
        let xj = x.column(j);
        let k = self.active.len();
        let b = DVector::from_iterator(k, self.active.iter().map(|&a| x.column(a).dot(&xj)));
        let c = xj.norm_squared();
        let u = &self.gram_inv * &b;
        let schur = c - b.dot(&u);
        if !(schur > SINGULAR_TOL * c) {
            return Err(Error::SingularGram(j));
        }

        let mut inv = DMatrix::zeros(k + 1, k + 1);
        {
            let mut block = inv.view_mut((0, 0), (k, k));
            block.copy_from(&self.gram_inv);
            block.ger(1.0 / schur, &u, &u, 1.0);
        }
        for i in 0..k {
            inv[(i, k)] = -u[i] / schur;
            inv[(k, i)] = -u[i] / schur;
        }
        inv[(k, k)] = 1.0 / schur;

        self.gram_inv = inv;
        self.xty = self.xty.push(xj.dot(design.y()));
        self.active.push(j);
        Ok(())
    }

    /// OLS coefficients of the response on the active columns, in active order.
    pub fn active_ols(&self) -> Result<DVector<f64>> {
        if self.active.is_empty() {
            return Err(Error::EmptyActiveSet);
        }
        Ok(&self.gram_inv * &self.xty)
    }

    /// Active-set OLS embedded into a length-`p` vector.
    pub fn active_ols_full(&self, p: usize) -> Result<DVector<f64>> {
        let nu = self.active_ols()?;
        let mut full = DVector::zeros(p);
        for (pos, &j) in self.active.iter().enumerate() {
            full[j] = nu[pos];
        }
        Ok(full)
    }
}

/// `X_A` as a dense matrix with columns in the given order.
pub fn select_columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, k| x[(i, cols[k])])
}

/// Dense least squares via SVD; used where the active-set kernel does not apply.
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    svd.solve(y, 1e-12).ok()
}
