//! Selective inference for the AFS selection path.
//!
//! For a fixed history of selected variables the coefficients are linear in
//! the response, `beta_t = B_t y` with
//! `B_t = (1 - rho) B_{t-1} + rho E_A (X_A'X_A)^{-1} X_A'`. Selecting `j_t`
//! with sign `s_t` against the residual `R_{t-1} y = (I - X B_{t-1}) y` is
//! then the set of linear inequalities
//!
//! ```text
//! (s_t x_{j_t} - x_j)' R_{t-1} y >= 0,   (s_t x_{j_t} + x_j)' R_{t-1} y >= 0
//! ```
//!
//! over `j != j_t`. Stacking these over the steps gives the polyhedron
//! `{y : Gamma y >= 0}`, and a linear statistic `v'y` conditioned on it is a
//! truncated Gaussian.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::afs::AfsPath;
use crate::error::{Error, Result};
use crate::linalg::{select_columns, GramState, StandardizedDesign};

/// Allowed violation of a row by the observed response, relative to `1 + ||y||`.
pub const FEASIBILITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEvent {
    /// Rows of `Gamma`, each of unit norm.
    pub gamma: DMatrix<f64>,
    /// Rows that carry a strict inequality.
    pub strict: Vec<bool>,
    /// `(j_t, s_t)` for `t = 1..=step`.
    pub history: Vec<(usize, f64)>,
    pub step: usize,
    /// Observed (centered) response.
    pub y: DVector<f64>,
}

impl SelectionEvent {
    /// `min_r (Gamma y)_r` for a candidate response.
    pub fn min_slack(&self, y: &DVector<f64>) -> f64 {
        if self.gamma.nrows() == 0 {
            return f64::INFINITY;
        }
        (&self.gamma * y).min()
    }

    pub fn contains(&self, y: &DVector<f64>) -> bool {
        self.min_slack(y) >= 0.0
    }
}

/// Builds `Gamma` for the first `k` steps of `path`.
pub fn selection_polyhedron(design: &StandardizedDesign, path: &AfsPath, k: usize) -> Result<SelectionEvent> {
    if k == 0 || k > path.len() {
        return Err(Error::InvalidConfig(format!(
            "step must lie in 1..={}, got {k}",
            path.len()
        )));
    }
    let n = design.n();
    let p = design.p();
    let x = design.x();
    let rho = path.config.rho;
    let mut b = DMatrix::<f64>::zeros(p, n);
    let mut rows: Vec<DVector<f64>> = Vec::new();
    let mut strict = Vec::new();
    let mut history = Vec::with_capacity(k);
    let mut prev_active: Vec<usize> = Vec::new();

    for step in &path.steps[..k] {
        // residual operator before this step, as R' x = x - B' X' x
        let resid_t = |a: &DVector<f64>| -> DVector<f64> { a - b.tr_mul(&x.tr_mul(a)) };
        let beta_prev = &b * design.y();
        let corr = design.correlations(&beta_prev);
        let jt = step.chosen;
        let s = if corr[jt] >= 0.0 { 1.0 } else { -1.0 };
        history.push((jt, s));
        let xs = x.column(jt).scale(s);
        for j in 0..p {
            if j == jt {
                continue;
            }
            let xj = x.column(j).into_owned();
            let is_strict = prev_active.contains(&j);
            for sign in [-1.0, 1.0] {
                let a = &xs + xj.scale(sign);
                rows.push(resid_t(&a));
                strict.push(false);
                if is_strict {
                    rows.push(resid_t(&a));
                    strict.push(true);
                }
            }
        }
        if p == 1 {
            rows.push(resid_t(&xs));
            strict.push(false);
        }

        let gram = GramState::from_active(design, &step.active)?;
        let xa = select_columns(x, &step.active);
        let proj = gram.gram_inv() * xa.transpose();
        b.scale_mut(1.0 - rho);
        for (pos, &j) in step.active.iter().enumerate() {
            let mut row = b.row_mut(j);
            row += proj.row(pos).scale(rho);
        }
        prev_active.clone_from(&step.active);
    }

    let mut gamma = DMatrix::zeros(rows.len(), n);
    for (r, row) in rows.iter().enumerate() {
        let norm = row.norm();
        let scaled = if norm > 0.0 { row / norm } else { row.clone() };
        gamma.row_mut(r).copy_from(&scaled.transpose());
    }
    let event = SelectionEvent {
        gamma,
        strict,
        history,
        step: k,
        y: design.y().clone(),
    };
    let slack = &event.gamma * design.y();
    let tol = FEASIBILITY_TOL * (1.0 + design.y().norm());
    if let Some((row, v)) = slack.iter().enumerate().find(|(_, v)| **v < -tol) {
        return Err(Error::InfeasibleEvent { row, violation: -v });
    }
    Ok(event)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationInterval {
    pub vlo: f64,
    pub vup: f64,
    /// No row constrains the contrast; the interval is the whole line.
    pub degenerate: bool,
}

/// Range of `v'y` over the polyhedron with the part of `y` orthogonal to `v` held fixed.
pub fn truncation_interval(event: &SelectionEvent, v: &DVector<f64>) -> Result<TruncationInterval> {
    let vv = v.norm_squared();
    if vv == 0.0 {
        return Err(Error::InvalidConfig("contrast vector is zero".into()));
    }
    if v.len() != event.y.len() {
        return Err(Error::DimensionMismatch(format!(
            "contrast has {} entries for {} observations",
            v.len(),
            event.y.len()
        )));
    }
    let c = v / vv;
    let z = v.dot(&event.y);
    let w = &event.y - c.scale(z);
    let gc = &event.gamma * &c;
    let gw = &event.gamma * &w;
    let scale = c.norm();
    let mut vlo = f64::NEG_INFINITY;
    let mut vup = f64::INFINITY;
    let mut any = false;
    for r in 0..event.gamma.nrows() {
        let a = gc[r];
        if a.abs() <= 1e-14 * scale {
            continue;
        }
        any = true;
        let bound = -gw[r] / a;
        if a > 0.0 {
            vlo = vlo.max(bound);
        } else {
            vup = vup.min(bound);
        }
    }
    Ok(TruncationInterval {
        vlo,
        vup,
        degenerate: !any,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastKind {
    /// `X (X'X)^{-1} e_j` on the full design.
    Full,
    /// The same on the selected columns only.
    Submodel,
}

/// Contrast for the coefficient of variable `j`: full-model when `p < n`,
/// otherwise on the columns in `active` (which must contain `j`).
pub fn coefficient_contrast(design: &StandardizedDesign, active: &[usize], j: usize) -> Result<(DVector<f64>, ContrastKind)> {
    let (cols, kind): (Vec<usize>, ContrastKind) = if design.p() < design.n() {
        ((0..design.p()).collect(), ContrastKind::Full)
    } else {
        (active.to_vec(), ContrastKind::Submodel)
    };
    let pos = cols
        .iter()
        .position(|&c| c == j)
        .ok_or_else(|| Error::InvalidConfig(format!("variable {j} is not in the model")))?;
    let gram = GramState::from_active(design, &cols)?;
    let xa = select_columns(design.x(), &cols);
    let v = xa * gram.gram_inv().column(pos);
    Ok((v, kind))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedTest {
    pub v: DVector<f64>,
    pub stat: f64,
    pub vlo: f64,
    pub vup: f64,
    pub sigma: f64,
    pub null_value: f64,
    pub pvalue: f64,
    pub ci: (f64, f64),
    /// Both tail masses fell below `1e-300`; the p-value is from log-space ratios.
    pub underflow: bool,
    pub degenerate: bool,
}

const LOG_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `log P(Z > x)` for standard normal `Z`, accurate far into the upper tail.
fn log_upper_tail(x: f64) -> f64 {
    if x == f64::INFINITY {
        return f64::NEG_INFINITY;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x < 25.0 {
        return (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln();
    }
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2) + 105.0 / (x2 * x2 * x2 * x2);
    -0.5 * x2 - x.ln() - LOG_SQRT_2PI + series.ln()
}

/// `log(exp(la) - exp(lb))` for `la >= lb`.
fn log_diff(la: f64, lb: f64) -> f64 {
    if lb == f64::NEG_INFINITY {
        return la;
    }
    la + (-(lb - la).exp_m1()).ln()
}

/// `log P(u < Z < w)`.
fn log_mass(u: f64, w: f64) -> f64 {
    if w <= u {
        return f64::NEG_INFINITY;
    }
    if w <= 0.0 {
        log_diff(log_upper_tail(-w), log_upper_tail(-u))
    } else if u >= 0.0 {
        log_diff(log_upper_tail(u), log_upper_tail(w))
    } else {
        let tails = log_upper_tail(-u).exp() + log_upper_tail(w).exp();
        (-tails).ln_1p()
    }
}

/// `(log F, log(1 - F))` of the Gaussian `N(mean, sd^2)` truncated to `(a, b)` at `z`.
fn log_truncated_cdf(z: f64, mean: f64, sd: f64, a: f64, b: f64) -> (f64, f64, bool) {
    let (a, z, b) = ((a - mean) / sd, (z - mean) / sd, (b - mean) / sd);
    let lower = log_mass(a, z);
    let upper = log_mass(z, b);
    let total = log_mass(a, b);
    let underflow = lower < -690.0 && upper < -690.0;
    (lower - total, upper - total, underflow)
}

fn two_sided(z: f64, mean: f64, sd: f64, a: f64, b: f64) -> (f64, bool) {
    let (lf, ls, underflow) = log_truncated_cdf(z, mean, sd, a, b);
    let p = 2.0 * lf.min(ls).exp();
    (if p.is_nan() { 1.0 } else { p.clamp(0.0, 1.0) }, underflow)
}

/// Solves `F_theta(z) = target` in `theta`; `F` decreases in `theta`.
fn invert(z: f64, sd: f64, a: f64, b: f64, target: f64) -> f64 {
    let cdf = |theta: f64| log_truncated_cdf(z, theta, sd, a, b).0.exp();
    let mut lo = z;
    let mut hi = z;
    let mut step = sd;
    let mut found = false;
    for _ in 0..80 {
        if cdf(lo) >= target {
            found = true;
            break;
        }
        hi = lo;
        lo -= step;
        step *= 2.0;
    }
    if !found {
        return f64::NEG_INFINITY;
    }
    if cdf(hi) >= target {
        found = false;
        step = sd;
        for _ in 0..80 {
            if cdf(hi) < target {
                found = true;
                break;
            }
            lo = hi;
            hi += step;
            step *= 2.0;
        }
        if !found {
            return f64::INFINITY;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if cdf(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Truncated-Gaussian test of `v' mu = null_value` given the selection event,
/// with a 95% confidence interval from test inversion.
pub fn tg_test(event: &SelectionEvent, v: &DVector<f64>, sigma: f64, null_value: f64) -> Result<TruncatedTest> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    let interval = truncation_interval(event, v)?;
    let stat = v.dot(&event.y);
    let sd = sigma * v.norm();
    let (pvalue, underflow) = two_sided(stat, null_value, sd, interval.vlo, interval.vup);
    if underflow {
        log::warn!("truncated-Gaussian tail masses underflow; p-value computed in log space");
    }
    let ci = (
        invert(stat, sd, interval.vlo, interval.vup, 0.975),
        invert(stat, sd, interval.vlo, interval.vup, 0.025),
    );
    Ok(TruncatedTest {
        v: v.clone(),
        stat,
        vlo: interval.vlo,
        vup: interval.vup,
        sigma,
        null_value,
        pvalue,
        ci,
        underflow,
        degenerate: interval.degenerate,
    })
}

/// Truncated-Gaussian p-value of `stat` under `N(mean, sd^2)` restricted to `(a, b)`.
pub fn truncated_pvalue(stat: f64, mean: f64, sd: f64, a: f64, b: f64) -> f64 {
    two_sided(stat, mean, sd, a, b).0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::afs::{afs_fit, AfsConfig};
    use crate::linalg::standardize;
    use crate::sim::gaussian_instance;

    fn event_with_rows(rows: &[&[f64]], y: &[f64]) -> SelectionEvent {
        let n = y.len();
        let gamma = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
        SelectionEvent {
            gamma,
            strict: vec![false; rows.len()],
            history: vec![],
            step: 0,
            y: DVector::from_column_slice(y),
        }
    }

    #[test]
    fn aligned_single_row_gives_half_line() {
        let e = event_with_rows(&[&[1.0, 0.0, 0.0]], &[0.5, 1.0, -2.0]);
        let iv = truncation_interval(&e, &DVector::from_vec(vec![1.0, 0.0, 0.0])).unwrap();
        assert_eq!(iv.vlo, 0.0);
        assert_eq!(iv.vup, f64::INFINITY);
    }

    #[test]
    fn empty_gamma_is_whole_line() {
        let e = event_with_rows(&[], &[0.5, 1.0]);
        let iv = truncation_interval(&e, &DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_eq!((iv.vlo, iv.vup), (f64::NEG_INFINITY, f64::INFINITY));
        assert!(iv.degenerate);
    }

    #[test]
    fn central_untruncated_pvalue_is_one() {
        assert_eq!(truncated_pvalue(0.0, 0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY), 1.0);
        let p = truncated_pvalue(1.959_963_984_540_054, 0.0, 1.0, f64::NEG_INFINITY, f64::INFINITY);
        assert!((p - 0.05).abs() < 1e-12, "{p}");
    }

    #[test]
    fn far_tail_is_finite() {
        let p = truncated_pvalue(45.0, 0.0, 1.0, 40.0, f64::INFINITY);
        assert!(p > 0.0 && p < 1.0);
        // Mills-ratio approximation of P(Z > 45 | Z > 40)
        let expect = 2.0f64.ln() - 0.5 * (45.0f64 * 45.0 - 40.0 * 40.0) + (40.0f64 / 45.0).ln();
        assert!((p.ln() - expect).abs() < 0.01, "{} vs {expect}", p.ln());
    }

    #[test]
    fn first_step_rows_are_argmax_conditions() {
        let (x, y) = gaussian_instance(20, 3, &[1.0, 0.5, 0.0], 1.0, 4);
        let d = standardize(&x, &y, true).unwrap();
        let path = afs_fit(&d, &AfsConfig::new(0.3, 3).uncapped()).unwrap();
        let e = selection_polyhedron(&d, &path, 1).unwrap();
        assert_eq!(e.gamma.nrows(), 4);
        let (j, s) = e.history[0];
        let mut expect = Vec::new();
        for k in 0..3 {
            if k == j {
                continue;
            }
            for sign in [-1.0, 1.0] {
                let r = d.x().column(j).scale(s) + d.x().column(k).scale(sign);
                expect.push(r.normalize());
            }
        }
        for (r, e_row) in expect.iter().enumerate() {
            assert!((e.gamma.row(r).transpose() - e_row).amax() < 1e-12);
        }
    }

    #[test]
    fn observed_response_is_inside() {
        let (x, y) = gaussian_instance(30, 5, &[1.0, -1.0, 0.5, 0.0, 0.0], 1.0, 8);
        let d = standardize(&x, &y, true).unwrap();
        let path = afs_fit(&d, &AfsConfig::new(0.4, 6).uncapped()).unwrap();
        for k in 1..=path.len() {
            let e = selection_polyhedron(&d, &path, k).unwrap();
            assert!(e.min_slack(d.y()) >= -1e-10);
        }
    }

    #[test]
    fn interval_matches_rerun_scan() {
        let (x, y) = gaussian_instance(6, 2, &[1.0, 0.3], 0.7, 12);
        let d = standardize(&x, &y, true).unwrap();
        let cfg = AfsConfig::new(0.5, 2).uncapped();
        let path = afs_fit(&d, &cfg).unwrap();
        let e = selection_polyhedron(&d, &path, 2).unwrap();
        let (v, _) = coefficient_contrast(&d, path.final_active(), path.steps[1].chosen).unwrap();
        let iv = truncation_interval(&e, &v).unwrap();
        let z = v.dot(d.y());
        assert!(iv.vlo < z && z < iv.vup);
        let member = |t: f64| -> bool {
            let yt = d.y() + v.scale((t - z) / v.norm_squared());
            let dt = d.with_response(&yt).unwrap();
            let pt = afs_fit(&dt, &cfg).unwrap();
            let et = selection_polyhedron(&dt, &pt, 2).map(|ev| ev.history);
            et.map(|h| h == e.history).unwrap_or(false)
        };
        let width = 10.0 * v.norm();
        let grid: Vec<f64> = (0..=4000).map(|i| z - width + 2.0 * width * i as f64 / 4000.0).collect();
        let inside: Vec<f64> = grid.iter().copied().filter(|&t| member(t)).collect();
        let lo = inside.first().copied().unwrap();
        let hi = inside.last().copied().unwrap();
        let h = 2.0 * width / 4000.0;
        if iv.vlo.is_finite() {
            assert!((lo - iv.vlo).abs() <= h + 1e-9, "{lo} vs {}", iv.vlo);
        } else {
            assert!((lo - grid[0]).abs() < 1e-12);
        }
        if iv.vup.is_finite() {
            assert!((hi - iv.vup).abs() <= h + 1e-9, "{hi} vs {}", iv.vup);
        } else {
            assert!((hi - grid[4000]).abs() < 1e-12);
        }
    }

    #[test]
    fn pvalue_is_continuous_near_upper_bound() {
        let (a, b) = (-1.0, 2.0);
        let mut prev = truncated_pvalue(2.0 - 1e-4, 0.3, 1.0, a, b);
        for i in 1..100 {
            let z = 2.0 - 1e-4 + i as f64 * 1e-8 * 9.0;
            let p = truncated_pvalue(z, 0.3, 1.0, a, b);
            assert!((p - prev).abs() < 1e-6);
            prev = p;
        }
    }

    #[test]
    fn interval_covers_untruncated_case() {
        let e = event_with_rows(&[], &[1.0, 2.0]);
        let v = DVector::from_vec(vec![1.0, 0.0]);
        let t = tg_test(&e, &v, 1.0, 0.0).unwrap();
        assert!((t.ci.0 - (1.0 - 1.959_963_984_540_054)).abs() < 1e-8);
        assert!((t.ci.1 - (1.0 + 1.959_963_984_540_054)).abs() < 1e-8);
    }
}
