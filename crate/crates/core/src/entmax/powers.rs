use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Exponent {
    /// α = 2: `t^1`.
    One,
    /// α = 1.5: `t^2`.
    Two,
    Integer(i32),
    General,
}

/// Powers of the shifted scaled logit `t = x - τ > 0` needed by the solvers
/// and the kernels.
///
/// With `e = 1/(α-1)`:
/// - probability `p = t^e`
/// - Jacobian weight `u = p^{2-α} = t^{e-1}`
/// - curvature term `t^{e-2}`
///
/// Integer exponents take an exact multiply path; everything else is
/// `exp(k·ln t)`. Callers only pass `t > 0`; the ReLU boundary is handled by
/// the caller with a hard zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntmaxPowers {
    alpha: f64,
    exponent: f64,
    kind: Exponent,
}

impl EntmaxPowers {
    pub fn new(alpha: f64) -> Result<Self> {
        super::check_alpha(alpha)?;
        let exponent = 1.0 / (alpha - 1.0);
        let kind = if alpha == 2.0 {
            Exponent::One
        } else if alpha == 1.5 {
            Exponent::Two
        } else if exponent.fract() == 0.0 && exponent <= 16.0 {
            Exponent::Integer(exponent as i32)
        } else {
            Exponent::General
        };
        Ok(Self {
            alpha,
            exponent,
            kind,
        })
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// `1/(α-1)`.
    #[inline]
    pub fn exponent(&self) -> f64 {
        self.exponent
    }

    /// Coefficient of `Σ t^{e-1}` in `f'`.
    #[inline]
    pub fn f1_coef(&self) -> f64 {
        -self.exponent
    }

    /// Coefficient of `Σ t^{e-2}` in `f''`; exactly zero for α = 2.
    #[inline]
    pub fn f2_coef(&self) -> f64 {
        if self.kind == Exponent::One {
            0.0
        } else {
            self.exponent * (self.exponent - 1.0)
        }
    }

    #[inline(always)]
    pub fn prob(&self, t: f64) -> f64 {
        match self.kind {
            Exponent::One => t,
            Exponent::Two => t * t,
            Exponent::Integer(m) => t.powi(m),
            Exponent::General => (t.ln() * self.exponent).exp(),
        }
    }

    /// `u = t^{e-1}`, the entmax Jacobian weight of an entry in the support.
    #[inline(always)]
    pub fn weight(&self, t: f64) -> f64 {
        match self.kind {
            Exponent::One => 1.0,
            Exponent::Two => t,
            Exponent::Integer(m) => t.powi(m - 1),
            Exponent::General => (t.ln() * (self.exponent - 1.0)).exp(),
        }
    }

    /// `(p, u)` for one entry, sharing the logarithm on the general path.
    #[inline(always)]
    pub fn prob_and_weight(&self, t: f64) -> (f64, f64) {
        match self.kind {
            Exponent::One => (t, 1.0),
            Exponent::Two => (t * t, t),
            Exponent::Integer(m) => {
                let u = t.powi(m - 1);
                (u * t, u)
            }
            Exponent::General => {
                let l = t.ln();
                ((l * self.exponent).exp(), (l * (self.exponent - 1.0)).exp())
            }
        }
    }

    /// Adds the contribution of one entry to the running root sums.
    #[inline(always)]
    pub fn accumulate(&self, t: f64, sums: &mut RootSums) {
        match self.kind {
            Exponent::One => {
                sums.p += t;
                sums.u += 1.0;
            }
            Exponent::Two => {
                sums.p += t * t;
                sums.u += t;
                sums.c += 1.0;
            }
            Exponent::Integer(m) => {
                let c = t.powi(m - 2);
                let u = c * t;
                sums.p += u * t;
                sums.u += u;
                sums.c += c;
            }
            Exponent::General => {
                let l = t.ln();
                sums.p += (l * self.exponent).exp();
                sums.u += (l * (self.exponent - 1.0)).exp();
                sums.c += (l * (self.exponent - 2.0)).exp();
            }
        }
    }

    /// `(f, f', f'')` from accumulated sums.
    #[inline]
    pub fn finish(&self, sums: &RootSums) -> (f64, f64, f64) {
        let f2 = if self.kind == Exponent::One {
            0.0
        } else {
            self.f2_coef() * sums.c
        };
        (sums.p - 1.0, self.f1_coef() * sums.u, f2)
    }
}

/// Additive partial sums behind `f`, `f'` and `f''`: `Σ t^e`, `Σ t^{e-1}`,
/// `Σ t^{e-2}` over entries with `t > 0`. Partial sums from disjoint column
/// blocks add up to the full-row sums.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RootSums {
    pub p: f64,
    pub u: f64,
    pub c: f64,
}

impl RootSums {
    #[inline]
    pub fn merge(&mut self, other: &RootSums) {
        self.p += other.p;
        self.u += other.u;
        self.c += other.c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn check_against_powf(alpha: f64) {
        let pw = EntmaxPowers::new(alpha).unwrap();
        let e = 1.0 / (alpha - 1.0);
        for &t in &[1e-6, 0.01, 0.3, 1.0, 2.5] {
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            assert!(rel(pw.prob(t), t.powf(e)) < 1e-12, "alpha {alpha} t {t}");
            assert!(rel(pw.weight(t), t.powf(e - 1.0)) < 1e-12);
            let (p, u) = pw.prob_and_weight(t);
            assert!(rel(p, t.powf(e)) < 1e-12 && rel(u, t.powf(e - 1.0)) < 1e-12);
            let mut s = RootSums::default();
            pw.accumulate(t, &mut s);
            assert!(rel(s.p, t.powf(e)) < 1e-12);
            assert!(rel(s.u, t.powf(e - 1.0)) < 1e-12);
            if alpha != 2.0 {
                assert!(rel(s.c, t.powf(e - 2.0)) < 1e-12);
            }
        }
    }

    #[test]
    fn fast_paths_match_powf() {
        for &a in &[1.25, 1.5, 1.7, 2.0, 2.5, 3.0, 1.1] {
            check_against_powf(a);
        }
    }

    #[test]
    fn sparsemax_has_no_curvature() {
        let pw = EntmaxPowers::new(2.0).unwrap();
        let mut s = RootSums::default();
        pw.accumulate(0.5, &mut s);
        let (f, f1, f2) = pw.finish(&s);
        assert_eq!((f, f1, f2), (-0.5, -1.0, 0.0));
    }
}
