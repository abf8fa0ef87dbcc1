//! Adaptive forward stepwise regression.
//!
//! Each step picks the column with the largest absolute inner product with the
//! current residual, adds it to the active set if it is new, computes the OLS
//! fit `nu` of the response on the active set, and moves the coefficients a
//! fraction `rho` of the way there:
//!
//! ```text
//! beta_m = (1 - rho) * beta_{m-1} + rho * nu_m
//! ```
//!
//! `rho = 1` is classical forward stepwise; small `rho` traces the LAR path.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lasso;
use crate::linalg::{GramState, StandardizedDesign};

/// Response energy fraction below which the fit is declared exact.
pub const EXACT_FIT_TOL: f64 = 1e-12;

/// Upper bound `h` on the l1 norm of the coefficients.
///
/// Serialized as `"auto"`, a number, or `"inf"` for no bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum L1Cap {
    /// Largest l1 norm along the LASSO path of the same design.
    Auto,
    /// Explicit bound; `f64::INFINITY` disables the check.
    Fixed(f64),
}

impl FromStr for L1Cap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "auto" => Ok(L1Cap::Auto),
            "inf" | "none" => Ok(L1Cap::Fixed(f64::INFINITY)),
            other => other
                .parse::<f64>()
                .map(L1Cap::Fixed)
                .map_err(|_| Error::InvalidConfig(format!("l1 cap must be 'auto', 'inf' or a number, got '{s}'"))),
        }
    }
}

impl fmt::Display for L1Cap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            L1Cap::Auto => f.write_str("auto"),
            L1Cap::Fixed(h) if h.is_infinite() => f.write_str("inf"),
            L1Cap::Fixed(h) => write!(f, "{h}"),
        }
    }
}

impl Serialize for L1Cap {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            L1Cap::Fixed(h) if h.is_finite() => s.serialize_f64(*h),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for L1Cap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(h) => Ok(L1Cap::Fixed(h)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    LowestIndex,
    HighestIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfsConfig {
    pub rho: f64,
    pub max_steps: usize,
    pub l1_cap: L1Cap,
    pub tie_break: TieBreak,
}

impl AfsConfig {
    pub fn new(rho: f64, max_steps: usize) -> Self {
        Self {
            rho,
            max_steps,
            l1_cap: L1Cap::Auto,
            tie_break: TieBreak::LowestIndex,
        }
    }

    /// Forward stepwise: `rho = 1`.
    pub fn forward_stepwise(max_steps: usize) -> Self {
        Self::new(1.0, max_steps)
    }

    pub fn with_l1_cap(mut self, cap: L1Cap) -> Self {
        self.l1_cap = cap;
        self
    }

    pub fn uncapped(self) -> Self {
        self.with_l1_cap(L1Cap::Fixed(f64::INFINITY))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if let L1Cap::Fixed(h) = self.l1_cap {
            if h.is_nan() || h < 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "l1 cap must be nonnegative, got {h}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    L1CapReached,
    SingularGram,
    ExactFit,
}

/// One recorded iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfsStep {
    pub m: usize,
    /// Coefficients on the standardized scale.
    pub beta: Vec<f64>,
    pub chosen: usize,
    /// `chosen` was new to the active set at this step.
    pub entered: bool,
    pub active: Vec<usize>,
    pub rss: f64,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AfsPath {
    pub steps: Vec<AfsStep>,
    pub config: AfsConfig,
    pub stop_reason: StopReason,
    /// The resolved l1 bound `h`.
    pub l1_cap: f64,
    /// `||y||^2` of the centered response (the RSS at step 0).
    pub rss0: f64,
    pub p: usize,
}

impl AfsPath {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Coefficients after `m` steps. `m = 0` is the empty model; past the end
    /// of the path the last recorded coefficients are returned.
    pub fn coefficients(&self, m: usize) -> DVector<f64> {
        if m == 0 || self.steps.is_empty() {
            return DVector::zeros(self.p);
        }
        let idx = m.min(self.steps.len()) - 1;
        DVector::from_column_slice(&self.steps[idx].beta)
    }

    /// Variables in the order they first entered the active set.
    pub fn entry_order(&self) -> Vec<usize> {
        self.steps
            .iter()
            .filter(|s| s.entered)
            .map(|s| s.chosen)
            .collect()
    }

    pub fn final_active(&self) -> &[usize] {
        self.steps.last().map(|s| s.active.as_slice()).unwrap_or(&[])
    }
}

/// Index of the largest `|v_j|` among indices not in `exclude`.
pub(crate) fn argmax_abs(v: &DVector<f64>, tie_break: TieBreak, exclude: &[usize]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &val) in v.iter().enumerate() {
        if exclude.contains(&j) {
            continue;
        }
        let a = val.abs();
        best = match best {
            None => Some((j, a)),
            Some((bj, ba)) => {
                let better = match tie_break {
                    TieBreak::LowestIndex => a > ba,
                    TieBreak::HighestIndex => a >= ba,
                };
                if better {
                    Some((j, a))
                } else {
                    Some((bj, ba))
                }
            }
        };
    }
    best.map(|(j, _)| j)
}

/// The column maximizing `|x_j' (y - X beta)|`.
pub fn select_variable(design: &StandardizedDesign, beta: &DVector<f64>, tie_break: TieBreak) -> usize {
    let corr = design.correlations(beta);
    argmax_abs(&corr, tie_break, &[]).expect("design has at least one column")
}

pub(crate) fn resolve_l1_cap(design: &StandardizedDesign, cap: L1Cap) -> Result<f64> {
    match cap {
        L1Cap::Fixed(h) => Ok(h),
        L1Cap::Auto => lasso::max_l1_norm(design),
    }
}

pub(crate) fn l1_norm(beta: &DVector<f64>) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// Runs adaptive forward stepwise on `design`.
///
/// Numerical breakdown of the active-set update is reported through
/// [`StopReason::SingularGram`]; the path up to that point is kept.
pub fn afs_fit(design: &StandardizedDesign, config: &AfsConfig) -> Result<AfsPath> {
    config.validate()?;
    let h = resolve_l1_cap(design, config.l1_cap)?;
    afs_fit_with_cap(design, config, h)
}

/// As [`afs_fit`] with the l1 bound already resolved. Cross-validation uses
/// this to share one bound across a grid of `rho` values.
pub fn afs_fit_with_cap(design: &StandardizedDesign, config: &AfsConfig, h: f64) -> Result<AfsPath> {
    config.validate()?;
    let p = design.p();
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
    let mut l1 = 0.0;
    for m in 1..=config.max_steps {
        if l1 >= h {
            path.stop_reason = StopReason::L1CapReached;
            return Ok(path);
        }
        let j = select_variable(design, &beta, config.tie_break);
        let entered = !gram.contains(j);
        if entered {
            if let Err(Error::SingularGram(_)) = gram.extend(design, j) {
                path.stop_reason = StopReason::SingularGram;
                return Ok(path);
            }
        }
        let nu = gram.active_ols_full(p)?;
        beta = beta.scale(1.0 - rho) + nu.scale(rho);
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
        if rss < EXACT_FIT_TOL * rss0 {
            path.stop_reason = StopReason::ExactFit;
            return Ok(path);
        }
    }
    if l1 >= h {
        path.stop_reason = StopReason::L1CapReached;
    }
    Ok(path)
}
