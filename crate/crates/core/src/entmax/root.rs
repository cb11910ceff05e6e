use std::fmt;

use super::{check_alpha, check_finite, threshold_probs, EntmaxPowers, LogitVector, ProbVector, RootSums};
use crate::error::Result;

/// Default iteration count for the Halley-bisection hybrid.
pub const DEFAULT_HALLEY_ITERS: usize = 3;
/// Default iteration count for plain bisection comparisons.
pub const DEFAULT_BISECTION_ITERS: usize = 10;

/// Bracket padding, in units of `EPSILON * max(1, |bound|)`, applied to the
/// initial bracket so rounding in `max - 1` and `max - n^{1-α}` cannot push
/// the root outside it.
const BRACKET_PAD_ULPS: f64 = 4.0;

/// `f(τ) = Σ [x_i - τ]₊^{1/(α-1)} - 1` with its first two derivatives, over
/// pre-scaled logits `x = (α-1)s`.
pub fn eval_f_and_derivs(scaled: &[f64], tau: f64, alpha: f64) -> Result<(f64, f64, f64)> {
    check_alpha(alpha)?;
    let powers = EntmaxPowers::new(alpha)?;
    Ok(eval_with(scaled, tau, &powers))
}

#[inline]
pub(crate) fn eval_with(scaled: &[f64], tau: f64, powers: &EntmaxPowers) -> (f64, f64, f64) {
    let mut sums = RootSums::default();
    for &x in scaled {
        let t = x - tau;
        if t > 0.0 {
            powers.accumulate(t, &mut sums);
        }
    }
    powers.finish(&sums)
}

/// Why a Halley proposal could not be formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalleyError {
    ZeroDenominator,
    NonFinite,
}

impl fmt::Display for HalleyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HalleyError::ZeroDenominator => write!(f, "halley denominator is zero"),
            HalleyError::NonFinite => write!(f, "halley step is not finite"),
        }
    }
}

impl std::error::Error for HalleyError {}

/// Which update produced the current τ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepKind {
    Init,
    Halley,
    Bisection,
}

/// Iterate of the threshold search.
///
/// `f_val`, `f1`, `f2` hold the evaluation at the τ that was current when
/// [`RootState::observe`] was last called (NaN before the first one).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootState {
    pub tau: f64,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub f_val: f64,
    pub f1: f64,
    pub f2: f64,
    pub iteration: usize,
    pub last_step: StepKind,
    /// Length of the previous τ update (infinite before the first).
    pub last_step_len: f64,
    /// Set for α > 2, where `f` is concave and Halley can cycle.
    pub guarded: bool,
}

impl RootState {
    /// Initial bracket `[max - 1, max - n^{1-α}]` around the root, padded by
    /// a few ulps, with τ at its midpoint. `n` counts the valid entries.
    pub fn initial(max_scaled: f64, n: usize, alpha: f64) -> Self {
        let lo = max_scaled - 1.0;
        let hi = max_scaled - (n as f64).powf(1.0 - alpha);
        let pad = |b: f64| BRACKET_PAD_ULPS * f64::EPSILON * b.abs().max(1.0);
        let tau_lo = lo - pad(lo);
        let tau_hi = hi + pad(hi);
        Self {
            tau: 0.5 * (tau_lo + tau_hi),
            tau_lo,
            tau_hi,
            f_val: f64::NAN,
            f1: f64::NAN,
            f2: f64::NAN,
            iteration: 0,
            last_step: StepKind::Init,
            last_step_len: f64::INFINITY,
            guarded: alpha > 2.0,
        }
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.tau_hi - self.tau_lo
    }

    #[inline]
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.tau_lo + self.tau_hi)
    }

    /// Records `f`, `f'`, `f''` at the current τ and shrinks the bracket:
    /// τ becomes the new upper bound when `f(τ) < 0`, the new lower bound
    /// otherwise.
    #[inline]
    pub fn observe(&mut self, f: f64, f1: f64, f2: f64) {
        self.f_val = f;
        self.f1 = f1;
        self.f2 = f2;
        if f < 0.0 {
            self.tau_hi = self.tau;
        } else {
            self.tau_lo = self.tau;
        }
    }

    /// Moves τ to the Halley proposal when it lands inside the bracket, to the
    /// bracket midpoint otherwise.
    ///
    /// For α > 2 a proposal is also rejected unless it moves τ by at most
    /// half the previous update; without this the iterates can settle into a
    /// two-cycle around a support change and the bracket stops shrinking.
    #[inline]
    pub fn advance_hybrid(&mut self) -> StepKind {
        let old = self.tau;
        let step = match halley_step(self) {
            Ok(h)
                if h >= self.tau_lo
                    && h <= self.tau_hi
                    && (!self.guarded || (h - old).abs() <= 0.5 * self.last_step_len) =>
            {
                self.tau = h;
                StepKind::Halley
            }
            _ => {
                self.tau = self.midpoint();
                StepKind::Bisection
            }
        };
        self.last_step_len = (self.tau - old).abs();
        self.iteration += 1;
        self.last_step = step;
        step
    }

    #[inline]
    pub fn advance_bisection(&mut self) {
        let mid = self.midpoint();
        self.last_step_len = (mid - self.tau).abs();
        self.tau = mid;
        self.iteration += 1;
        self.last_step = StepKind::Bisection;
    }

    #[inline]
    pub fn advance(&mut self, method: RootMethod) {
        match method {
            RootMethod::HalleyBisection => {
                self.advance_hybrid();
            }
            RootMethod::Bisection => self.advance_bisection(),
        }
    }
}

/// `τ - 2 f f' / (2 f'² - f f'')` from the evaluation stored in `state`.
/// With `f'' = 0` this is exactly a Newton step.
#[inline]
pub fn halley_step(state: &RootState) -> std::result::Result<f64, HalleyError> {
    let (f, f1, f2) = (state.f_val, state.f1, state.f2);
    let denom = 2.0 * f1 * f1 - f * f2;
    if denom == 0.0 {
        return Err(HalleyError::ZeroDenominator);
    }
    let next = state.tau - 2.0 * f * f1 / denom;
    if next.is_finite() {
        Ok(next)
    } else {
        Err(HalleyError::NonFinite)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RootMethod {
    HalleyBisection,
    Bisection,
}

/// Threshold that makes `n` equal scaled logits uniform.
#[inline]
pub fn uniform_tau(max_scaled: f64, n: usize, alpha: f64) -> f64 {
    max_scaled - (n as f64).powf(1.0 - alpha)
}

/// Runs `iters` iterations of `method` over pre-scaled logits, calling
/// `on_iter` after every iteration with the updated state. No degenerate-input
/// shortcuts are taken.
pub fn solve_traced(
    scaled: &[f64],
    alpha: f64,
    iters: usize,
    method: RootMethod,
    mut on_iter: impl FnMut(&RootState),
) -> Result<RootState> {
    check_alpha(alpha)?;
    check_finite(scaled)?;
    let powers = EntmaxPowers::new(alpha)?;
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut state = RootState::initial(max, scaled.len(), alpha);
    for _ in 0..iters {
        let (f, f1, f2) = eval_with(scaled, state.tau, &powers);
        state.observe(f, f1, f2);
        state.advance(method);
        on_iter(&state);
    }
    Ok(state)
}

/// Plain bisection from the initial bracket. After `iters` iterations the
/// bracket is `2^iters` times narrower and τ is its midpoint.
pub fn bisection_tau(s: &LogitVector, iters: usize) -> Result<RootState> {
    solve_traced(&s.scaled(), s.alpha(), iters, RootMethod::Bisection, |_| {})
}

/// α-entmax through plain bisection; returns probabilities and the scaled τ.
pub fn entmax_bisection(s: &LogitVector, iters: usize) -> Result<(ProbVector, f64)> {
    let scaled = s.scaled();
    let state = solve_traced(&scaled, s.alpha(), iters, RootMethod::Bisection, |_| {})?;
    let powers = EntmaxPowers::new(s.alpha())?;
    Ok((
        ProbVector::from_raw(threshold_probs(&scaled, state.tau, &powers)),
        state.tau,
    ))
}

/// α-entmax through the Halley-bisection hybrid; returns probabilities and
/// the scaled τ.
///
/// A single logit, or all-equal logits, return the exact (uniform) answer
/// without iterating.
pub fn entmax_halley(s: &LogitVector, iters: usize) -> Result<(ProbVector, f64)> {
    if iters == 0 {
        return Err(crate::Error::InvalidConfig("iters must be >= 1".into()));
    }
    let alpha = s.alpha();
    let scaled = s.scaled();
    let n = scaled.len();
    let (min, max) = scaled
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if min == max {
        let tau = uniform_tau(max, n, alpha);
        return Ok((ProbVector::from_raw(vec![1.0 / n as f64; n]), tau));
    }
    let state = solve_traced(&scaled, alpha, iters, RootMethod::HalleyBisection, |_| {})?;
    let powers = EntmaxPowers::new(alpha)?;
    Ok((
        ProbVector::from_raw(threshold_probs(&scaled, state.tau, &powers)),
        state.tau,
    ))
}
