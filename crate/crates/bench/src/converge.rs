//! Per-iteration error of the row solvers on Gaussian logits.

use entmax_attention::entmax::{solve_traced, threshold_probs, EntmaxPowers, RootMethod};
use entmax_attention::oracle::reference_entmax;

use crate::config::{BenchConfig, Method};
use crate::error::Result;
use crate::inputs::gen_logits;
use crate::report::{BenchRow, ConvergenceRow};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    /// One row per (n, σ², method, iteration).
    pub curves: Vec<ConvergenceRow>,
    /// One row per (n, σ², method) carrying `iters_to_tol`: the first
    /// iteration after which the MAE stays within `tol` for the rest of the
    /// trace. Bisection error is not monotone, so a first touch can be early.
    pub summary: Vec<BenchRow>,
}

impl ConvergenceStudy {
    /// Trace of the first curve of `method`, iterations in order.
    pub fn curve(&self, method: Method) -> Vec<&ConvergenceRow> {
        let first = self.curves.iter().find(|r| r.method == method);
        self.curves
            .iter()
            .filter(|r| first.is_some_and(|f| r.method == method && r.n == f.n && r.sigma2 == f.sigma2))
            .collect()
    }

    /// MAE after `iteration` for the first curve of `method`.
    pub fn mae_at(&self, method: Method, iteration: usize) -> Option<f64> {
        self.curve(method).get(iteration.checked_sub(1)?).map(|r| r.mae)
    }
}

pub fn reference_name(alpha: f64) -> &'static str {
    if alpha == 2.0 {
        "sparsemax_exact"
    } else if alpha == 1.5 {
        "entmax15_exact"
    } else {
        "bisection_100"
    }
}

fn root_method(m: Method) -> RootMethod {
    match m {
        Method::Bisection => RootMethod::Bisection,
        _ => RootMethod::HalleyBisection,
    }
}

pub fn run_convergence_study(cfg: &BenchConfig) -> Result<ConvergenceStudy> {
    cfg.validate_convergence()?;
    let alpha = cfg.alpha;
    let powers = EntmaxPowers::new(alpha)?;
    let mut curves = Vec::new();
    let mut summary = Vec::new();
    for &n in &cfg.seq_lens {
        for &sigma2 in &cfg.sigma2 {
            let s = gen_logits(n, sigma2, cfg.seed);
            let (exact, _) = reference_entmax(&s, alpha)?;
            let exact = exact.values();
            let scaled: Vec<f64> = s.iter().map(|x| (alpha - 1.0) * x).collect();
            for &method in &cfg.methods {
                let mut last_above = 0;
                solve_traced(&scaled, alpha, cfg.iters, root_method(method), |st| {
                    let p = threshold_probs(&scaled, st.tau, &powers);
                    let (sum, max) = p.iter().zip(exact).fold((0.0, 0.0f64), |(s, m), (a, b)| {
                        let e = (a - b).abs();
                        (s + e, m.max(e))
                    });
                    let mae = sum / n as f64;
                    if !(mae <= cfg.tol) {
                        last_above = st.iteration;
                    }
                    curves.push(ConvergenceRow {
                        method,
                        n,
                        alpha,
                        sigma2,
                        seed: cfg.seed,
                        iteration: st.iteration,
                        mae,
                        max_abs_err: max,
                        bracket_width: st.width(),
                        reference: reference_name(alpha),
                    });
                })?;
                summary.push(BenchRow {
                    method,
                    n,
                    d: None,
                    alpha,
                    sigma2,
                    seed: cfg.seed,
                    fwd_ms: None,
                    bwd_ms: None,
                    iters_to_tol: (last_above < cfg.iters).then_some(last_above + 1),
                    peak_aux_bytes: None,
                    visited_blocks: None,
                    total_blocks: None,
                    attn_sparsity: None,
                });
            }
        }
    }
    Ok(ConvergenceStudy { curves, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> BenchConfig {
        BenchConfig {
            seq_lens: vec![512],
            methods: vec![Method::Halley, Method::Bisection],
            iters: 25,
            ..Default::default()
        }
    }

    #[test]
    fn one_row_per_iteration() {
        let st = run_convergence_study(&cfg()).unwrap();
        assert_eq!(st.curves.len(), 50);
        assert_eq!(st.summary.len(), 2);
        assert!(st.curves[..25].iter().enumerate().all(|(i, r)| r.iteration == i + 1));
        assert!(st.curves.iter().all(|r| r.reference == "entmax15_exact"));
    }

    #[test]
    fn halley_reaches_tolerance_first() {
        let st = run_convergence_study(&cfg()).unwrap();
        let h = st.summary[0].iters_to_tol.unwrap();
        let b = st.summary[1].iters_to_tol.unwrap();
        assert!(h <= 3 && h < b, "halley {h} bisection {b}");
    }

    #[test]
    fn general_alpha_uses_bisection_reference() {
        let c = BenchConfig { alpha: 1.3, iters: 5, ..cfg() };
        let st = run_convergence_study(&c).unwrap();
        assert!(st.curves.iter().all(|r| r.reference == "bisection_100"));
    }
}
