//! Sort-based exact solutions for α = 2 and α = 1.5.
//!
//! Both subtract the maximum first so that the scans run on non-positive
//! values; the returned τ is shifted back to the caller's scale.

use super::{check_finite, ProbVector};
use crate::error::Result;

fn sorted_desc(values: &[f64], shift: f64, scale: f64) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().map(|&x| (x - shift) * scale).collect();
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    v
}

/// Euclidean projection onto the simplex (sparsemax) by sort and scan.
/// Returns the probabilities and τ (α - 1 = 1, so τ is on the raw logits).
pub fn sparsemax_exact(s: &[f64]) -> Result<(ProbVector, f64)> {
    check_finite(s)?;
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = sorted_desc(s, max, 1.0);
    let mut cumsum = 0.0;
    let mut support = 0;
    let mut support_sum = 0.0;
    for (k, &zk) in z.iter().enumerate() {
        cumsum += zk;
        let k1 = (k + 1) as f64;
        if 1.0 + k1 * zk > cumsum {
            support = k + 1;
            support_sum = cumsum;
        }
    }
    let tau_shifted = (support_sum - 1.0) / support as f64;
    let p = s
        .iter()
        .map(|&x| {
            let t = (x - max) - tau_shifted;
            if t > 0.0 {
                t
            } else {
                0.0
            }
        })
        .collect();
    Ok((ProbVector::from_raw(p), tau_shifted + max))
}

/// Exact 1.5-entmax by sorting. Returns the probabilities and τ on the
/// scaled logits `s / 2`.
pub fn entmax15_exact(s: &[f64]) -> Result<(ProbVector, f64)> {
    check_finite(s)?;
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let x = sorted_desc(s, max, 0.5);
    // For a support made of the k largest entries, τ solves
    // Σ (x_i - τ)² = 1, i.e. τ = mean - sqrt((1 - Σ(x_i - mean)²) / k).
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut tau_star = f64::NAN;
    for (k, &xk) in x.iter().enumerate() {
        let k1 = (k + 1) as f64;
        let delta = xk - mean;
        mean += delta / k1;
        m2 += delta * (xk - mean);
        let disc = ((1.0 - m2) / k1).max(0.0);
        let tau = mean - disc.sqrt();
        if tau <= xk {
            tau_star = tau;
        } else {
            break;
        }
    }
    let p = s
        .iter()
        .map(|&v| {
            let t = 0.5 * (v - max) - tau_star;
            if t > 0.0 {
                t * t
            } else {
                0.0
            }
        })
        .collect();
    Ok((ProbVector::from_raw(p), tau_star + 0.5 * max))
}
