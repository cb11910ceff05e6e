//! Vector-level α-entmax: `p = [(α-1)s - τ]₊^{1/(α-1)}` with τ chosen so that
//! `Σp = 1`.
//!
//! Three families of solvers live here:
//!
//! - [`entmax_halley`]: the Halley-bisection hybrid, the solver used by the
//!   attention kernels (one row at a time in [`crate::forward`]).
//! - [`bisection_tau`] / [`entmax_bisection`]: plain bracket halving.
//! - [`sparsemax_exact`] and [`entmax15_exact`]: sort-based exact solutions
//!   for α = 2 and α = 1.5, used as oracles.
//!
//! All solvers share the pre-scaled convention: logits are multiplied by
//! `α - 1` once on entry and every threshold τ refers to the scaled logits.

mod exact;
mod jacobian;
mod powers;
mod root;

pub use exact::{entmax15_exact, sparsemax_exact};
pub use jacobian::entmax_vjp;
pub use powers::{EntmaxPowers, RootSums};
pub use root::{
    bisection_tau, entmax_bisection, entmax_halley, eval_f_and_derivs, halley_step, solve_traced,
    uniform_tau, HalleyError, RootMethod, RootState, StepKind, DEFAULT_BISECTION_ITERS,
    DEFAULT_HALLEY_ITERS,
};

use crate::error::{Error, Result, MIN_ALPHA_GAP};

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if alpha.is_finite() && alpha >= 1.0 + MIN_ALPHA_GAP {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// Validated entmax input: finite, non-empty logits together with α.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector {
    values: Vec<f64>,
    alpha: f64,
}

impl LogitVector {
    pub fn new(values: Vec<f64>, alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        check_finite(&values)?;
        Ok(Self { values, alpha })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Logits multiplied by `α - 1`.
    pub fn scaled(&self) -> Vec<f64> {
        let k = self.alpha - 1.0;
        self.values.iter().map(|v| v * k).collect()
    }
}

/// Entmax output. Entries outside the support are exactly `0.0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    values: Vec<f64>,
}

impl ProbVector {
    /// Wraps a probability vector, checking entries are in `[0, 1]` and the
    /// total is within `tol` of one.
    pub fn new(values: Vec<f64>, tol: f64) -> Result<Self> {
        check_finite(&values)?;
        if let Some(i) = values.iter().position(|&v| !(0.0..=1.0 + tol).contains(&v)) {
            return Err(Error::InvalidConfig(format!(
                "probability {} at index {i} outside [0, 1]",
                values[i]
            )));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > tol {
            return Err(Error::InvalidConfig(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { values })
    }

    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn support(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

/// `[x - τ]₊^{1/(α-1)}` over pre-scaled logits.
pub fn threshold_probs(scaled: &[f64], tau: f64, powers: &EntmaxPowers) -> Vec<f64> {
    scaled
        .iter()
        .map(|&x| {
            let t = x - tau;
            if t > 0.0 {
                powers.prob(t)
            } else {
                0.0
            }
        })
        .collect()
}
