use super::{check_alpha, ProbVector};
use crate::error::{Error, Result};

/// Vector-Jacobian product of α-entmax at output `p`.
///
/// The Jacobian is `Diag(u) - u uᵀ / ‖u‖₁` with `u_j = p_j^{2-α}` on the
/// support and `u_j = 0` elsewhere, so
/// `ds = u ⊙ dp - (uᵀdp / ‖u‖₁) u`, which vanishes off the support.
pub fn entmax_vjp(p: &ProbVector, dp: &[f64], alpha: f64) -> Result<Vec<f64>> {
    check_alpha(alpha)?;
    if dp.len() != p.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            found: dp.len(),
        });
    }
    let u: Vec<f64> = p
        .values()
        .iter()
        .map(|&pj| if pj > 0.0 { pj.powf(2.0 - alpha) } else { 0.0 })
        .collect();
    let u_sum: f64 = u.iter().sum();
    if u_sum <= 0.0 {
        return Err(Error::DegenerateJacobian);
    }
    let delta = u.iter().zip(dp).map(|(a, b)| a * b).sum::<f64>() / u_sum;
    Ok(u.iter().zip(dp).map(|(&uj, &g)| uj * (g - delta)).collect())
}
