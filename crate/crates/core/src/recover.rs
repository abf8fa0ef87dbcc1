//! AFS with an adaptive step that stops on LAR knots.
//!
//! Each step first tries the full `rho`. If that would make a new variable the
//! most correlated with the residual, the step size is cut back to the last
//! value (found by an epsilon schedule) at which the active set still wins,
//! so the step ends just before the next knot. The variable that takes over
//! at the boundary enters on the following step. Once no inactive variable
//! can enter, the last step goes all the way to the OLS fit and the path
//! ends there with [`StopReason::ExactFit`].
//!
//! In LASSO mode a step is also truncated where an active coefficient would
//! cross zero; that variable is dropped and kept out of the next selection.

use nalgebra::DVector;

use crate::afs::{argmax_abs, l1_norm, resolve_l1_cap, AfsConfig, AfsPath, AfsStep, StopReason, EXACT_FIT_TOL};
use crate::error::{Error, Result};
use crate::linalg::{GramState, StandardizedDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RecoverMode {
    #[default]
    Lar,
    Lasso,
}

/// `rho * 2^-t` for `t = 1..=levels`.
pub fn default_schedule(rho: f64, levels: usize) -> Vec<f64> {
    (1..=levels).map(|t| rho * 0.5f64.powi(t as i32)).collect()
}

fn new_leader(design: &StandardizedDesign, beta: &DVector<f64>, gram: &GramState, config: &AfsConfig, exclude: &[usize]) -> Option<usize> {
    let corr = design.correlations(beta);
    let j = argmax_abs(&corr, config.tie_break, exclude)?;
    (!gram.contains(j)).then_some(j)
}

/// Runs the knot-seeking variant of AFS. `eps_schedule` must be strictly
/// decreasing and positive.
pub fn lar_recover_fit(design: &StandardizedDesign, config: &AfsConfig, eps_schedule: &[f64], mode: RecoverMode) -> Result<AfsPath> {
    config.validate()?;
    if eps_schedule.is_empty() || eps_schedule.windows(2).any(|w| w[1] >= w[0]) || eps_schedule[eps_schedule.len() - 1] <= 0.0 {
        return Err(Error::InvalidConfig("eps schedule must be positive and strictly decreasing".into()));
    }
    let h = resolve_l1_cap(design, config.l1_cap)?;
    let p = design.p();
    let max_active = p.min(design.n() - 1);
    let rho = config.rho;
    let rss0 = design.y().norm_squared();
    let mut path = AfsPath {
        steps: Vec::new(),
        config: *config,
        stop_reason: StopReason::MaxSteps,
        l1_cap: h,
        rss0,
        p,
    };
    if rss0 == 0.0 {
        path.stop_reason = StopReason::ExactFit;
        return Ok(path);
    }

    let mut beta = DVector::zeros(p);
    let mut gram = GramState::new();
    let mut pending: Option<usize> = None;
    let mut excluded: Vec<usize> = Vec::new();
    let mut l1 = 0.0;
    for m in 1..=config.max_steps {
        if l1 >= h {
            path.stop_reason = StopReason::L1CapReached;
            return Ok(path);
        }
        let j = match pending.take() {
            Some(j) => j,
            None => {
                let corr = design.correlations(&beta);
                argmax_abs(&corr, config.tie_break, &excluded).expect("p >= 1")
            }
        };
        let entered = !gram.contains(j);
        if entered && gram.extend(design, j).is_err() {
            path.stop_reason = StopReason::SingularGram;
            return Ok(path);
        }
        let nu = gram.active_ols_full(p)?;
        let dir = &nu - &beta;

        let can_grow = gram.len() < max_active;
        let mut t = if can_grow { rho } else { 1.0 };
        if can_grow {
            if let Some(first) = new_leader(design, &(&beta + dir.scale(t)), &gram, config, &excluded) {
                let mut lo = 0.0;
                let mut leader = first;
                for &eps in eps_schedule {
                    let cand = lo + eps;
                    if cand >= t {
                        continue;
                    }
                    match new_leader(design, &(&beta + dir.scale(cand)), &gram, config, &excluded) {
                        None => lo = cand,
                        Some(k) => leader = k,
                    }
                }
                if lo == 0.0 {
                    return Err(Error::ScheduleExhausted(m));
                }
                pending = Some(leader);
                t = lo;
            }
        }

        let mut dropped = None;
        if mode == RecoverMode::Lasso {
            for &a in gram.active() {
                if beta[a] != 0.0 && dir[a] != 0.0 {
                    let cross = -beta[a] / dir[a];
                    if cross > 0.0 && cross < t {
                        t = cross;
                        dropped = Some(a);
                    }
                }
            }
        }

        beta += dir.scale(t);
        excluded.clear();
        if let Some(a) = dropped {
            beta[a] = 0.0;
            let keep: Vec<usize> = gram.active().iter().copied().filter(|&k| k != a).collect();
            gram = GramState::from_active(design, &keep)?;
            excluded.push(a);
            pending = None;
        }
        let rss = design.residual(&beta).norm_squared();
        l1 = l1_norm(&beta);
        path.steps.push(AfsStep {
            m,
            beta: beta.as_slice().to_vec(),
            chosen: j,
            entered,
            active: gram.active().to_vec(),
            rss,
            l1,
        });
        if rss < EXACT_FIT_TOL * rss0 || (!can_grow && t == 1.0 && dropped.is_none()) {
            path.stop_reason = StopReason::ExactFit;
            return Ok(path);
        }
    }
    if l1 >= h {
        path.stop_reason = StopReason::L1CapReached;
    }
    Ok(path)
}
