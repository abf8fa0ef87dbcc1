//! Exact least angle regression, knot by knot.
//!
//! Between knots the active coefficients move along `G_A^{-1} s_A` so every
//! active column keeps the same absolute correlation with the residual. A knot
//! is where an inactive column ties that common correlation; the last segment
//! ends at the OLS fit on the final active set.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::afs::{argmax_abs, TieBreak};
use crate::error::{Error, Result};
use crate::linalg::{GramState, StandardizedDesign};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LarKnot {
    pub beta: Vec<f64>,
    /// Active set on the segment ending at this knot.
    pub active: Vec<usize>,
    pub l1: f64,
}

/// Piecewise-linear LAR path. The implicit starting point is `beta = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LarPath {
    pub knots: Vec<LarKnot>,
    pub p: usize,
}

impl LarPath {
    pub fn entry_order(&self) -> Vec<usize> {
        self.knots.last().map(|k| k.active.clone()).unwrap_or_default()
    }

    pub fn final_l1(&self) -> f64 {
        self.knots.last().map(|k| k.l1).unwrap_or(0.0)
    }

    /// Coefficients at l1 norm `t`, or `None` beyond the last knot.
    pub fn beta_at_l1(&self, t: f64) -> Option<DVector<f64>> {
        self.beta_at_weighted_l1(t, &vec![1.0; self.p])
    }

    /// Coefficients where `sum_j w_j |beta_j| = t`. With `w_j = 1 / scale_j`
    /// this matches on the l1 norm of the original-scale coefficients.
    pub fn beta_at_weighted_l1(&self, t: f64, w: &[f64]) -> Option<DVector<f64>> {
        let norm = |b: &DVector<f64>| -> f64 { b.iter().zip(w).map(|(v, wj)| v.abs() * wj).sum() };
        let mut prev = DVector::zeros(self.p);
        let mut prev_l1 = 0.0;
        if t <= 0.0 {
            return Some(prev);
        }
        for knot in &self.knots {
            let next = DVector::from_column_slice(&knot.beta);
            let next_l1 = norm(&next);
            if t <= next_l1 {
                // l1 is convex along the segment; bisect on the crossing
                let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
                if prev_l1 > t {
                    return Some(prev);
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    let b = &prev + (&next - &prev).scale(mid);
                    if norm(&b) < t {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let tau = 0.5 * (lo + hi);
                return Some(&prev + (&next - &prev).scale(tau));
            }
            prev = next;
            prev_l1 = next_l1;
        }
        None
    }
}

/// Computes up to `max_knots` knots of the LAR path, stopping early once
/// `min(n - 1, p)` variables are active and the OLS fit is reached.
pub fn lar_path(design: &StandardizedDesign, max_knots: usize) -> Result<LarPath> {
    let p = design.p();
    let n = design.n();
    let max_active = p.min(n - 1);
    let mut path = LarPath {
        knots: Vec::new(),
        p,
    };
    if max_knots == 0 || max_active == 0 {
        return Ok(path);
    }

    let mut beta = DVector::zeros(p);
    let corr = design.correlations(&beta);
    if corr.amax() == 0.0 {
        return Ok(path);
    }
    let first = argmax_abs(&corr, TieBreak::LowestIndex, &[]).expect("p >= 1");
    warn_on_tie(&corr, first, &[]);
    let mut gram = GramState::new();
    gram.extend(design, first)
        .map_err(|_| Error::DegenerateDirection(0))?;

    loop {
        let corr = design.correlations(&beta);
        let active = gram.active().to_vec();
        let big_c = active.iter().map(|&j| corr[j].abs()).fold(0.0, f64::max);
        let signs = DVector::from_iterator(active.len(), active.iter().map(|&j| corr[j].signum()));
        let dir = gram.gram_inv() * &signs;
        let mut u = DVector::zeros(n);
        for (pos, &j) in active.iter().enumerate() {
            u.axpy(dir[pos], &design.x().column(j), 1.0);
        }
        let a = design.x().tr_mul(&u);

        let mut gamma = big_c;
        let mut entering: Option<usize> = None;
        if active.len() < max_active {
            for j in 0..p {
                if gram.contains(j) {
                    continue;
                }
                for cand in [
                    (big_c - corr[j]) / (1.0 - a[j]),
                    (big_c + corr[j]) / (1.0 + a[j]),
                ] {
                    if cand.is_finite() && cand > 1e-12 * big_c && cand < gamma {
                        if let Some(prev) = entering {
                            if (cand - gamma).abs() <= 1e-12 * gamma {
                                log::warn!("LAR tie between columns {prev} and {j}; keeping {prev}");
                                continue;
                            }
                        }
                        gamma = cand;
                        entering = Some(j);
                    }
                }
            }
        }

        for (pos, &j) in active.iter().enumerate() {
            beta[j] += gamma * dir[pos];
        }
        path.knots.push(LarKnot {
            beta: beta.as_slice().to_vec(),
            active: active.clone(),
            l1: beta.lp_norm(1),
        });

        let Some(j) = entering else { break };
        if path.knots.len() >= max_knots {
            break;
        }
        let k = path.knots.len();
        gram.extend(design, j)
            .map_err(|_| Error::DegenerateDirection(k))?;
    }
    Ok(path)
}

fn warn_on_tie(corr: &DVector<f64>, chosen: usize, exclude: &[usize]) {
    let best = corr[chosen].abs();
    for (j, c) in corr.iter().enumerate() {
        if j != chosen && !exclude.contains(&j) && c.abs() == best {
            log::warn!("tied selection between columns {chosen} and {j}; keeping {chosen}");
        }
    }
}
