//! Acceptance checks, one line of output per criterion.
//!
//! Run with `cargo test -p afs-verify --test acceptance`. The process exits
//! non-zero if any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use afs_core::boost::{soft_threshold_path, threshold_bracket};
use afs_core::cv::{kfold_cv, refit, Fitter, DEFAULT_RHO_GRID};
use afs_core::dof::{afs_dof, bootstrap_dof, LinearSmoother};
use afs_core::inference::{coefficient_contrast, selection_polyhedron, tg_test};
use afs_core::lar::lar_path;
use afs_core::lasso::{lasso_path, max_l1_norm};
use afs_core::logistic::{afs_logistic_fit, logistic_design, sigmoid};
use afs_core::models::Method;
use afs_core::sim::{gaussian_instance, orthonormal_instance, run_benchmark, BenchOptions, BenchmarkReport, SimConfig};
use afs_core::{afs_fit, standardize, AfsConfig, AfsPath, StandardizedDesign};

/// Collects failed conditions and notes for one criterion.
#[derive(Default)]
struct Report {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Report {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    x.clone().svd(true, true).solve(y, 1e-13).expect("svd solve")
}

fn argmax_abs(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for j in 1..v.len() {
        if v[j].abs() > v[best].abs() {
            best = j;
        }
    }
    best
}

fn columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(x.nrows(), cols.len(), |i, c| x[(i, cols[c])])
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

fn orthonormal_design(seed: u64) -> StandardizedDesign {
    let beta: Vec<f64> = (0..6).map(|j| 3.0 * (6 - j) as f64 / 6.0).collect();
    let (x, y) = orthonormal_instance(100, &beta, 0.3, seed);
    StandardizedDesign::from_centered(x, y).expect("orthonormal design")
}

/// Textbook forward stepwise: pick the column most correlated with the
/// residual, then least squares on everything picked so far.
fn forward_stepwise(x: &DMatrix<f64>, y: &DVector<f64>, steps: usize) -> Vec<Vec<f64>> {
    let p = x.ncols();
    let mut active: Vec<usize> = Vec::new();
    let mut beta = DVector::zeros(p);
    let mut out = Vec::new();
    for _ in 0..steps {
        let r = y - x * &beta;
        let j = argmax_abs(&x.tr_mul(&r));
        if !active.contains(&j) {
            active.push(j);
        }
        let coef = ols(&columns(x, &active), y);
        beta = DVector::zeros(p);
        for (c, &a) in active.iter().enumerate() {
            beta[a] = coef[c];
        }
        out.push(beta.as_slice().to_vec());
    }
    out
}

fn criterion_1(r: &mut Report) {
    let beta = [2.0, -1.5, 1.0, 0.8, -0.5, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut worst: f64 = 0.0;
    for seed in 0..25 {
        let (x, y) = gaussian_instance(60, 15, &beta, 1.0, 1000 + seed);
        let d = standardize(&x, &y, true).unwrap();
        let path = afs_fit(&d, &AfsConfig::forward_stepwise(15).uncapped()).unwrap();
        let oracle = forward_stepwise(d.x(), d.y(), 15);
        r.check(path.len() == 15, format!("seed {seed}: {} steps", path.len()));
        for (s, o) in path.steps.iter().zip(&oracle) {
            worst = worst.max(max_abs_diff(&s.beta, o));
        }
    }
    r.note(format!("max |dbeta| = {worst:.2e}"));
    r.check(worst <= 1e-10, "coefficients differ by more than 1e-10");
}

/// `beta_j(m) = b_j (1 - (1 - rho)^(m - k_j + 1))`, driving the selection by
/// the closed-form residual correlations `b - beta`.
fn orthogonal_closed_form(b: &DVector<f64>, rho: f64, steps: usize) -> Vec<Vec<f64>> {
    let p = b.len();
    let q = 1.0 - rho;
    let mut entry: Vec<Option<usize>> = vec![None; p];
    let mut beta = DVector::zeros(p);
    let mut out = Vec::new();
    for m in 1..=steps {
        let j = argmax_abs(&(b - &beta));
        entry[j].get_or_insert(m);
        for k in 0..p {
            if let Some(kj) = entry[k] {
                beta[k] = b[k] * (1.0 - q.powi((m - kj + 1) as i32));
            }
        }
        out.push(beta.as_slice().to_vec());
    }
    out
}

fn criterion_2(r: &mut Report) {
    for seed in [3u64, 4] {
        let d = orthonormal_design(seed);
        let b = d.x().tr_mul(d.y());
        for rho in [0.15, 0.5, 1.0] {
            let path = afs_fit(&d, &AfsConfig::new(rho, 50).uncapped()).unwrap();
            let cf = orthogonal_closed_form(&b, rho, path.len());
            let worst = path
                .steps
                .iter()
                .zip(&cf)
                .map(|(s, c)| max_abs_diff(&s.beta, c))
                .fold(0.0, f64::max);
            r.note(format!("seed {seed} rho {rho}: {} steps, max diff {worst:.1e}", path.len()));
            r.check(worst <= 1e-12, format!("seed {seed} rho {rho}: diff {worst:.3e}"));
            r.check(path.len() == 50, format!("seed {seed} rho {rho}: path stopped at {}", path.len()));
        }
    }
}

fn criterion_3(r: &mut Report) {
    let d = orthonormal_design(5);
    for rho in [0.05, 0.1] {
        let path = afs_fit(&d, &AfsConfig::new(rho, 400).uncapped()).unwrap();
        let last_entry = path.steps.iter().filter(|s| s.entered).map(|s| s.m).max().unwrap();
        let mut rss = vec![path.rss0];
        rss.extend(path.steps.iter().map(|s| s.rss));
        // decrement realized at step m
        let dec = |m: usize| rss[m - 1] - rss[m];
        if rss.len() < last_entry + 52 {
            r.check(false, format!("rho {rho}: path too short"));
            continue;
        }
        let target = (1.0 - rho) * (1.0 - rho);
        let mut worst: f64 = 0.0;
        let mut literal = 0.0;
        for m in last_entry + 1..=last_entry + 50 {
            let ratio = dec(m + 1) / dec(m);
            worst = worst.max((ratio / target - 1.0).abs());
            literal = dec(m) / dec(m + 1);
        }
        r.note(format!(
            "rho {rho}: last entry at step {last_entry}, max rel err {worst:.1e}, earlier/later ratio {literal:.6}"
        ));
        r.check(worst <= 1e-8, format!("rho {rho}: relative error {worst:.3e}"));
    }
}

fn fig4_design() -> StandardizedDesign {
    let (x, y) = gaussian_instance(100, 7, &[1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0], 1.0, 4);
    standardize(&x, &y, true).unwrap()
}

/// Largest coordinate gap (original scale) between AFS and LAR at matched
/// original-scale l1 norms, up to the end of the LAR path.
fn lar_gap(d: &StandardizedDesign, path: &AfsPath) -> f64 {
    let lar = lar_path(d, 50).unwrap();
    let scale = d.col_scales();
    let w: Vec<f64> = scale.iter().map(|s| 1.0 / s).collect();
    let end: f64 = lar.knots.last().unwrap().beta.iter().zip(&w).map(|(b, w)| b.abs() * w).sum();
    let mut gap: f64 = 0.0;
    for s in &path.steps {
        let t: f64 = s.beta.iter().zip(&w).map(|(b, w)| b.abs() * w).sum();
        if t > end {
            break;
        }
        let l = lar.beta_at_weighted_l1(t, &w).unwrap();
        for j in 0..d.p() {
            gap = gap.max(((s.beta[j] - l[j]) * w[j]).abs());
        }
    }
    gap
}

fn criterion_4(r: &mut Report) {
    let d = fig4_design();
    let lar = lar_path(&d, 50).unwrap();
    let mut gaps = Vec::new();
    let mut order = Vec::new();
    for rho in [0.1, 0.05, 0.01, 0.005] {
        let steps = (30.0 / rho) as usize;
        let path = afs_fit(&d, &AfsConfig::new(rho, steps)).unwrap();
        gaps.push(lar_gap(&d, &path));
        order = path.entry_order();
    }
    r.note(format!("gaps {:?}", gaps.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>()));
    for w in gaps.windows(2) {
        r.check(w[1] <= w[0], format!("gap increased from {:.4} to {:.4}", w[0], w[1]));
    }
    r.check(gaps[3] <= 0.05, format!("gap at rho 0.005 is {:.4}", gaps[3]));
    r.note(format!("entry order {order:?}, LAR {:?}", lar.entry_order()));
    r.check(order == lar.entry_order(), "entry order differs from LAR");
}

fn criterion_5(r: &mut Report) {
    let d = orthonormal_design(6);
    let b = d.x().tr_mul(d.y());
    let mut gaps = Vec::new();
    let mut outside = 0usize;
    let mut total = 0usize;
    for rho in [0.2, 0.1, 0.05, 0.025] {
        let steps = (20.0 / rho) as usize;
        let st = soft_threshold_path(&d, &AfsConfig::new(rho, steps).uncapped(), false).unwrap();
        let mut gap: f64 = 0.0;
        for (s, a) in st.steps.iter().zip(&st.afs) {
            for j in 0..d.p() {
                // soft thresholding of the OLS coefficient, recomputed here
                let expect = match s.lambda[j] {
                    Some(l) => b[j].signum() * (b[j].abs() - l).max(0.0),
                    None => 0.0,
                };
                r.check((expect - s.beta[j]).abs() <= 1e-12, format!("rho {rho} step {} coord {j}: ST mismatch", s.m));
                gap = gap.max((a[j] - expect).abs());
                if let Some(l) = s.lambda[j] {
                    let (lo, hi) = threshold_bracket(rho, s.ell[j]);
                    total += 1;
                    if !(l >= lo && l < hi) {
                        outside += 1;
                    }
                }
            }
        }
        gaps.push(gap);
    }
    let ratios: Vec<f64> = gaps.windows(2).map(|w| w[1] / w[0]).collect();
    r.note(format!(
        "gaps {:?}, ratios {:?}",
        gaps.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>(),
        ratios.iter().map(|g| format!("{g:.3}")).collect::<Vec<_>>()
    ));
    for q in &ratios {
        r.check((0.375..=0.625).contains(q), format!("gap ratio {q:.3} outside 0.5 +- 25%"));
    }
    r.note(format!("{outside} of {total} thresholds outside the bracket"));
    r.check(outside == 0, format!("{outside} of {total} thresholds outside the bracket"));
}

fn kkt_residual(d: &StandardizedDesign, lambda: f64, beta: &DVector<f64>) -> f64 {
    let n = d.n() as f64;
    let g = d.x().tr_mul(&(d.y() - d.x() * beta)) / n;
    (0..beta.len())
        .map(|j| {
            if beta[j] != 0.0 {
                (g[j] - lambda * beta[j].signum()).abs()
            } else {
                (g[j].abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn criterion_6(r: &mut Report) {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut beta = vec![0.0; 20];
        beta[..4].copy_from_slice(&[2.0, -1.0, 1.0, 0.5]);
        let (x, y) = gaussian_instance(100, 20, &beta, 1.0, 200 + seed);
        let d = standardize(&x, &y, true).unwrap();
        let path = lasso_path(&d, 50, 1e-3).unwrap();
        r.check(path.len() == 50, "path does not have 50 points");
        for k in 0..path.len() {
            worst = worst.max(kkt_residual(&d, path.lambdas[k], &path.beta(k)));
        }
    }
    r.note(format!("max KKT residual {worst:.1e}"));
    r.check(worst <= 1e-6, format!("KKT residual {worst:.3e}"));

    let d = orthonormal_design(7);
    let b = d.x().tr_mul(d.y());
    let n = d.n() as f64;
    let path = lasso_path(&d, 50, 1e-3).unwrap();
    let mut worst: f64 = 0.0;
    for k in 0..path.len() {
        let t = n * path.lambdas[k];
        let st: Vec<f64> = b.iter().map(|v| v.signum() * (v.abs() - t).max(0.0)).collect();
        worst = worst.max(max_abs_diff(&path.betas[k], &st));
    }
    r.note(format!("orthonormal path vs soft thresholding {worst:.1e}"));
    r.check(worst <= 1e-8, format!("orthonormal path differs by {worst:.3e}"));
}

fn criterion_7(r: &mut Report) {
    let mut worst_rel: f64 = 0.0;
    let mut crossings = 0;
    for seed in 0..5 {
        let beta: Vec<f64> = (0..10).map(|j| if j < 4 { 1.0 + j as f64 * 0.5 } else { 0.0 }).collect();
        let (x, y) = gaussian_instance(100, 10, &beta, 1.0, 300 + seed);
        let d = standardize(&x, &y, true).unwrap();
        let h = max_l1_norm(&d).unwrap();
        let full = ols(d.x(), d.y()).lp_norm(1);
        worst_rel = worst_rel.max((h - full).abs() / full);
        for rho in DEFAULT_RHO_GRID {
            let path = afs_fit(&d, &AfsConfig::new(rho, 3000)).unwrap();
            r.check((path.l1_cap - h).abs() <= 1e-12 * h, "auto cap differs from max_l1_norm");
            let over = path.steps.iter().filter(|s| s.l1 >= path.l1_cap).count();
            let last_over = path.steps.last().map(|s| s.l1 >= path.l1_cap).unwrap_or(false);
            crossings += over;
            r.check(
                over == 0 || (over == 1 && last_over),
                format!("seed {seed} rho {rho}: {over} steps at or above the cap"),
            );
        }
    }
    r.note(format!("max |h - ||ols||_1| / ||ols||_1 = {worst_rel:.1e}; {crossings} final steps reached the cap"));
    r.check(worst_rel <= 0.01, format!("max_l1_norm off by {:.2}%", worst_rel * 100.0));
}

fn summary_of(report: &BenchmarkReport, method: Method) -> &afs_core::sim::CellSummary {
    report.summary.iter().find(|s| s.method == method).expect("method in summary")
}

fn criterion_8(r: &mut Report) {
    let start = Instant::now();
    let cell = SimConfig::equicorrelated(120, 100, 0.0, 2.0, 0);
    let report = run_benchmark(&[cell], &[Method::Afs, Method::Lasso], 30, 8, &BenchOptions::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let afs = summary_of(&report, Method::Afs);
    let lasso = summary_of(&report, Method::Lasso);
    r.note(format!(
        "AFS tpr {} fpr {:.4} support {}; LASSO support {}; {secs:.1}s",
        afs.median_tpr, afs.median_fpr, afs.median_support, lasso.median_support
    ));
    r.check(afs.trials_failed == 0 && lasso.trials_failed == 0, "some trials failed");
    r.check(afs.median_tpr == 1.0, format!("AFS median TPR {}", afs.median_tpr));
    r.check(afs.median_fpr <= 0.02, format!("AFS median FPR {:.4}", afs.median_fpr));
    r.check(
        afs.median_support <= lasso.median_support,
        format!("AFS support {} > LASSO {}", afs.median_support, lasso.median_support),
    );
    r.check(secs < 300.0, format!("took {secs:.0}s"));
}

fn criterion_9(r: &mut Report) {
    let cell = SimConfig::equicorrelated(100, 120, 0.06, 4.42, 0);
    let report = run_benchmark(&[cell], &[Method::Afs, Method::Lasso], 20, 9, &BenchOptions::default()).unwrap();
    let afs = summary_of(&report, Method::Afs);
    let lasso = summary_of(&report, Method::Lasso);
    let afs_rows: Vec<_> = report.rows.iter().filter(|row| row.method == Method::Afs).collect();
    let good = afs_rows.iter().filter(|row| row.support >= 5 && row.tpr == 1.0).count();
    let frac = good as f64 / afs_rows.len() as f64;
    r.note(format!(
        "median support LASSO {} vs AFS {}; AFS support >= 5 with TPR 1 in {good}/{}",
        lasso.median_support,
        afs.median_support,
        afs_rows.len()
    ));
    r.check(lasso.median_support > afs.median_support, "LASSO median support does not exceed AFS");
    r.check(frac >= 0.7, format!("only {:.0}% of seeds recover the support", frac * 100.0));
}

/// `(j_t, sign of x_j' r_{t-1})` for the first `k` steps.
fn history(d: &StandardizedDesign, path: &AfsPath, k: usize) -> Vec<(usize, f64)> {
    (0..k.min(path.len()))
        .map(|t| {
            let j = path.steps[t].chosen;
            let prev = path.coefficients(t);
            let c = d.x().column(j).dot(&(d.y() - d.x() * prev));
            (j, c.signum())
        })
        .collect()
}

/// Kolmogorov distribution tail `P(K > lambda)`.
fn kolmogorov_tail(lambda: f64) -> f64 {
    let mut s = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        s += 2.0 * (-1f64).powi(k as i32 - 1) * (-2.0 * k * k * lambda * lambda).exp();
    }
    s.clamp(0.0, 1.0)
}

fn ks_uniform(mut u: Vec<f64>) -> (f64, f64) {
    u.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = u.len() as f64;
    let mut dmax: f64 = 0.0;
    for (i, v) in u.iter().enumerate() {
        dmax = dmax.max((i as f64 + 1.0) / n - v).max(v - i as f64 / n);
    }
    let en = n.sqrt();
    (dmax, kolmogorov_tail((en + 0.12 + 0.11 / en) * dmax))
}

fn criterion_10(r: &mut Report) {
    let x = DMatrix::from_row_slice(3, 2, &[1.0, 0.3, -0.4, 1.1, 0.2, -0.9]);
    let y_obs = DVector::from_column_slice(&[1.5, -0.7, 0.4]);
    let d = standardize(&x, &y_obs, true).unwrap();
    let cfg = AfsConfig::new(0.3, 3).uncapped();
    let path = afs_fit(&d, &cfg).unwrap();
    let event = selection_polyhedron(&d, &path, 3).unwrap();
    let observed = history(&d, &path, 3);
    let scale = d.y().norm();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut mismatches, mut inside) = (0usize, 0usize);
    let draws = 100_000;
    for _ in 0..draws {
        let y = &y_obs + normals(&mut rng, 3) * scale;
        let dy = d.with_response(&y).unwrap();
        let rerun = afs_fit(&dy, &cfg).unwrap();
        let same = rerun.len() >= 3 && history(&dy, &rerun, 3) == observed;
        let member = event.contains(dy.y());
        inside += member as usize;
        mismatches += (same != member) as usize;
    }
    r.note(format!("{mismatches} mismatches in {draws} draws ({inside} inside)"));
    r.check(mismatches == 0, format!("{mismatches} membership mismatches"));
    r.check(inside > 0 && inside < draws, "draws do not cover both sides of the boundary");

    let (x, _) = gaussian_instance(50, 5, &[0.0; 5], 1.0, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut pvalues = Vec::with_capacity(500);
    for _ in 0..500 {
        let y = normals(&mut rng, 50);
        let d = standardize(&x, &y, true).unwrap();
        let path = afs_fit(&d, &AfsConfig::new(0.3, 1).uncapped()).unwrap();
        let event = selection_polyhedron(&d, &path, 1).unwrap();
        let (v, _) = coefficient_contrast(&d, &path.steps[0].active, path.steps[0].chosen).unwrap();
        pvalues.push(tg_test(&event, &v, 1.0, 0.0).unwrap().pvalue);
    }
    let (dstat, pks) = ks_uniform(pvalues);
    r.note(format!("global null KS D = {dstat:.4}, p = {pks:.3}"));
    r.check(pks >= 0.01, format!("KS p-value {pks:.4}"));
}

fn criterion_11(r: &mut Report) {
    let (x, _) = gaussian_instance(40, 8, &[0.0; 8], 1.0, 20);
    let g = x.tr_mul(&x) + DMatrix::identity(8, 8) * 2.0;
    let h = &x * g.try_inverse().unwrap() * x.transpose();
    let mu = DVector::from_fn(40, |i, _| (i as f64 * 0.2).cos());
    let est = bootstrap_dof(&mu, 1.0, 1000, 21, &LinearSmoother(h.clone())).unwrap();
    let tr = h.trace();
    r.note(format!("ridge dof {:.3} +- {:.3}, trace {tr:.3}", est.dof, est.se));
    r.check((est.dof - tr).abs() <= 3.0 * est.se, "ridge dof not within 3 se of trace(H)");

    let mut beta = vec![0.0; 10];
    beta[..3].copy_from_slice(&[1.0, -0.8, 0.6]);
    let (x, _) = gaussian_instance(50, 10, &beta, 1.0, 22);
    let mu = &x * DVector::from_column_slice(&beta);
    for steps in [3usize, 6] {
        let slow = afs_dof(&x, &mu, 1.0, &AfsConfig::new(0.1, steps).uncapped(), 1000, 23).unwrap();
        let fs = afs_dof(&x, &mu, 1.0, &AfsConfig::new(1.0, steps).uncapped(), 1000, 23).unwrap();
        let tol = 3.0 * (slow.se * slow.se + fs.se * fs.se).sqrt();
        r.note(format!("M={steps}: dof(0.1) {:.3} +- {:.3}, dof(1.0) {:.3} +- {:.3}", slow.dof, slow.se, fs.dof, fs.se));
        r.check(slow.dof <= fs.dof + tol, format!("M={steps}: dof ordering violated"));
    }
}

/// Newton's method for logistic regression with intercept on the given columns.
fn logistic_mle(z: &DMatrix<f64>, y: &DVector<f64>, start: DVector<f64>) -> DVector<f64> {
    let mut theta = start;
    for _ in 0..200 {
        let p = (z * &theta).map(sigmoid);
        let g = z.tr_mul(&(y - &p));
        if g.amax() < 1e-12 {
            break;
        }
        let w = p.map(|v| v * (1.0 - v));
        let zw = DMatrix::from_fn(z.nrows(), z.ncols(), |i, c| z[(i, c)] * w[i]);
        let hess = z.tr_mul(&zw);
        theta += hess.cholesky().expect("positive definite").solve(&g);
    }
    theta
}

fn bernoulli_data(n: usize, beta: &[f64], intercept: f64, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>) {
    let p = beta.len();
    let x = DMatrix::from_fn(n, p, |_, _| -> f64 { StandardNormal.sample(rng) });
    let eta = (&x * DVector::from_column_slice(beta)).add_scalar(intercept);
    let y = eta.map(|e| if rng.random::<f64>() < sigmoid(e) { 1.0 } else { 0.0 });
    (x, y)
}

fn separable_toy(n: usize, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>) {
    let mut x = DMatrix::from_fn(n, 3, |_, _| -> f64 { StandardNormal.sample(rng) });
    let y = DVector::from_fn(n, |i, _| if i % 2 == 0 { 1.0 } else { 0.0 });
    for i in 0..n {
        x[(i, 1)] = if y[i] == 1.0 { 0.5 + x[(i, 1)].abs() } else { -0.5 - x[(i, 1)].abs() };
    }
    (x, y)
}

fn misclassification(eta: &DVector<f64>, y: &DVector<f64>) -> f64 {
    let wrong = eta.iter().zip(y.iter()).filter(|(e, t)| (**e > 0.0) != (**t == 1.0)).count();
    wrong as f64 / y.len() as f64
}

fn criterion_12(r: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let (x, y) = separable_toy(40, &mut rng);
    let (xt, yt) = separable_toy(200, &mut rng);
    let d = logistic_design(&x, &y).unwrap();
    let path = afs_logistic_fit(&d, &AfsConfig::new(0.5, 50)).unwrap();
    let model = path.model(&d, path.len());
    let err = misclassification(&model.predict(&xt), &yt);
    r.note(format!("separable toy: stop {:?}, test error {err}", path.stop_reason));
    r.check(err == 0.0, format!("separable toy test error {err}"));

    let (x, y) = bernoulli_data(200, &[1.5, -1.0, 0.5, 0.0, 0.0, 0.0], 0.3, &mut rng);
    let d = logistic_design(&x, &y).unwrap();
    let path = afs_logistic_fit(&d, &AfsConfig::forward_stepwise(6).uncapped()).unwrap();
    let ybar = y.mean();
    let mut active: Vec<usize> = Vec::new();
    let mut theta = DVector::from_element(1, (ybar / (1.0 - ybar)).ln());
    let mut worst: f64 = 0.0;
    for s in &path.steps {
        let mut beta = DVector::zeros(6);
        for (c, &a) in active.iter().enumerate() {
            beta[a] = theta[c + 1];
        }
        let p = (d.x() * &beta).add_scalar(theta[0]).map(sigmoid);
        let j = argmax_abs(&d.x().tr_mul(&(d.y() - p)));
        if !active.contains(&j) {
            active.push(j);
            theta = theta.push(0.0);
        }
        let z = DMatrix::from_fn(d.n(), active.len() + 1, |i, c| if c == 0 { 1.0 } else { d.x()[(i, active[c - 1])] });
        theta = logistic_mle(&z, d.y(), theta);
        let mut full = vec![0.0; 6];
        for (c, &a) in active.iter().enumerate() {
            full[a] = theta[c + 1];
        }
        r.check(s.chosen == j, format!("step {}: chose {} not {j}", s.m, s.chosen));
        worst = worst.max(max_abs_diff(&s.beta, &full)).max((s.intercept - theta[0]).abs());
    }
    r.note(format!("rho = 1 vs stepwise MLE: {} steps, max diff {worst:.1e}", path.len()));
    r.check(path.len() == 6, "stepwise path is short");
    r.check(worst <= 1e-6, format!("stepwise MLE differs by {worst:.3e}"));

    let mut worst_gap: f64 = 0.0;
    let mut mean_gap = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        let (x, mut y) = bernoulli_data(1200, &[1.0, -1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0], -0.7, &mut rng);
        y.as_mut_slice().shuffle(&mut rng);
        let train: Vec<usize> = (0..200).collect();
        let test: Vec<usize> = (200..1200).collect();
        let xtr = DMatrix::from_fn(200, 8, |i, j| x[(train[i], j)]);
        let ytr = DVector::from_fn(200, |i, _| y[train[i]]);
        let xte = DMatrix::from_fn(1000, 8, |i, j| x[(test[i], j)]);
        let yte = DVector::from_fn(1000, |i, _| y[test[i]]);
        let fitter = Fitter::logistic_afs(30);
        let cvr = kfold_cv(&xtr, &ytr, &fitter, 5, seed).unwrap();
        let model = refit(&xtr, &ytr, &fitter, &cvr.selected_point()).unwrap();
        let err = misclassification(&model.predict(&xte), &yte);
        let majority = if ytr.mean() >= 0.5 { 1.0 } else { 0.0 };
        let base = yte.iter().filter(|v| **v != majority).count() as f64 / 1000.0;
        worst_gap = worst_gap.max((err - base).abs());
        mean_gap += (err - base) / 20.0;
    }
    r.note(format!("permuted labels: mean error - base {mean_gap:.4}, worst {worst_gap:.4}"));
    r.check(worst_gap <= 0.05, format!("permuted-label error {worst_gap:.3} from base rate"));
}

/// Runs the command line in-process, writing its output to a fresh file.
fn run_cli(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = dir.join(format!("out-{}", RUNS.fetch_add(1, Ordering::Relaxed)));
    let mut argv: Vec<&str> = args.to_vec();
    argv.extend(["--out", out.to_str().unwrap()]);
    if let Err(e) = afs_cli::run_args(&argv) {
        panic!("afs {args:?}: {e}");
    }
    std::fs::read(&out).unwrap()
}

static RUNS: AtomicUsize = AtomicUsize::new(0);

fn criterion_13(r: &mut Report) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    let data = data.to_str().unwrap();
    let sim = [
        "simulate", "--n", "50", "--p", "12", "--snr", "2", "--seed", "5", "--k", "5", "--max-steps", "60", "--data-out", data,
    ];
    run_cli(dir.path(), &sim);
    let runs: [&[&str]; 4] = [
        &["bench", "--n", "40,50", "--p", "10", "--corr", "0,0.3", "--snr", "2", "--trials", "2", "--k", "4", "--seed", "13", "--max-steps", "60", "--format", "csv"],
        &["bench", "--n", "40", "--p", "10", "--snr", "1,2", "--trials", "3", "--k", "4", "--seed", "13", "--max-steps", "60"],
        &["cv", "--input", data, "--response", "y", "--k", "5", "--seed", "3", "--max-steps", "60"],
        &["cv", "--input", data, "--response", "y", "--method", "lasso", "--k", "5", "--seed", "3", "--format", "csv"],
    ];
    for args in runs {
        let a = run_cli(dir.path(), args);
        let b = run_cli(dir.path(), args);
        r.check(!a.is_empty() && a == b, format!("{} {} output differs between runs", args[0], args[args.len() - 1]));
    }
    r.note("4 command lines run twice each");
}

fn main() {
    let criteria: [(&str, fn(&mut Report)); 13] = [
        ("FS equivalence", criterion_1),
        ("orthogonal closed form", criterion_2),
        ("RSS recursion", criterion_3),
        ("AFS approaches LAR as rho shrinks", criterion_4),
        ("soft-thresholding approximation", criterion_5),
        ("LASSO solver soundness", criterion_6),
        ("early-stop l1 bound", criterion_7),
        ("support recovery benchmark", criterion_8),
        ("motivating example trend", criterion_9),
        ("selective inference", criterion_10),
        ("bootstrap degrees of freedom", criterion_11),
        ("logistic AFS", criterion_12),
        ("determinism", criterion_13),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let mut report = Report::default();
        let outcome = catch_unwind(AssertUnwindSafe(|| f(&mut report)));
        if let Err(e) = outcome {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            report.failures.push(format!("panicked: {msg}"));
        }
        let secs = start.elapsed().as_secs_f64();
        let status = if report.failures.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} {status} {name} ({secs:.1}s): {}", report.notes.join("; "));
        for f in &report.failures {
            println!("    - {f}");
        }
        if !report.failures.is_empty() {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
