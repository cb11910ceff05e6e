//! Dense reference implementations.
//!
//! Everything here materialises `n × n` matrices in double precision and is
//! meant for tests and benchmark correctness checks only. Inputs larger than
//! [`ORACLE_CAP`] are rejected.

use crate::backward::GradBundle;
use crate::entmax::{
    entmax15_exact, entmax_bisection, entmax_vjp, sparsemax_exact, LogitVector, ProbVector,
};
use crate::error::{Error, Result};
use crate::forward::{AttnConfig, AttnInputs};
use crate::matrix::{DenseMatrix, Element};

pub const ORACLE_CAP: usize = 4096;

/// Bisection iterations used when no sort-based solver exists for α. The
/// bracket reaches adjacent doubles well before this.
pub const REFERENCE_BISECTION_ITERS: usize = 100;

/// Dense forward intermediates. Entries hidden by the causal structure hold
/// `-inf` in `s` and zero in `p` and `u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTrace {
    pub s: DenseMatrix,
    pub p: DenseMatrix,
    pub u: DenseMatrix,
    pub o: DenseMatrix,
    /// Thresholds on the `(α - 1)`-scaled scores.
    pub tau: Vec<f64>,
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::OracleCapExceeded { n, cap });
    }
    Ok(())
}

fn visible(causal: bool, row: usize, n: usize) -> usize {
    if causal {
        row + 1
    } else {
        n
    }
}

fn scores<T: Element>(inputs: &AttnInputs<T>, cfg: &AttnConfig) -> Result<DenseMatrix> {
    let q = inputs.q().to_f64();
    let k = inputs.k().to_f64();
    let scale = cfg.resolved_scale(inputs.d());
    let mut s = q.matmul(&k.transpose())?.map(|x| scale * x);
    if cfg.causal {
        for r in 0..s.rows() {
            for c in r + 1..s.cols() {
                s.set(r, c, f64::NEG_INFINITY);
            }
        }
    }
    Ok(s)
}

/// Exact entmax of one row for α ∈ {1.5, 2}, long bisection otherwise.
/// Returns probabilities and τ on the scaled row.
pub fn reference_entmax(s: &[f64], alpha: f64) -> Result<(ProbVector, f64)> {
    if alpha == 2.0 {
        sparsemax_exact(s)
    } else if alpha == 1.5 {
        entmax15_exact(s)
    } else {
        entmax_bisection(&LogitVector::new(s.to_vec(), alpha)?, REFERENCE_BISECTION_ITERS)
    }
}

/// `S = scale · Q Kᵀ`, row-wise entmax, `O = P V`.
pub fn dense_entmax_attention<T: Element>(inputs: &AttnInputs<T>, cfg: &AttnConfig) -> Result<DenseTrace> {
    dense_entmax_attention_capped(inputs, cfg, ORACLE_CAP)
}

pub fn dense_entmax_attention_capped<T: Element>(
    inputs: &AttnInputs<T>,
    cfg: &AttnConfig,
    cap: usize,
) -> Result<DenseTrace> {
    let n = inputs.n();
    check_cap(n, cap)?;
    cfg.validate()?;
    let s = scores(inputs, cfg)?;
    let mut p = DenseMatrix::zeros(n, n);
    let mut u = DenseMatrix::zeros(n, n);
    let mut tau = Vec::with_capacity(n);
    for r in 0..n {
        let len = visible(cfg.causal, r, n);
        let (pr, t) = reference_entmax(&s.row(r)[..len], cfg.alpha)?;
        for (c, &pv) in pr.values().iter().enumerate() {
            if pv > 0.0 {
                p.set(r, c, pv);
                u.set(r, c, pv.powf(2.0 - cfg.alpha));
            }
        }
        tau.push(t);
    }
    let o = p.matmul(&inputs.v().to_f64())?;
    Ok(DenseTrace { s, p, u, o, tau })
}

/// Standard softmax attention with the same scale and causal structure.
pub fn dense_softmax_attention<T: Element>(inputs: &AttnInputs<T>, cfg: &AttnConfig) -> Result<DenseMatrix> {
    let n = inputs.n();
    check_cap(n, ORACLE_CAP)?;
    let s = scores(inputs, cfg)?;
    let mut p = DenseMatrix::zeros(n, n);
    for r in 0..n {
        let len = visible(cfg.causal, r, n);
        let row = &s.row(r)[..len];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&x| (x - max).exp()).sum();
        for (c, &x) in row.iter().enumerate() {
            p.set(r, c, (x - max).exp() / z);
        }
    }
    p.matmul(&inputs.v().to_f64())
}

/// Gradients of `⟨dO, O⟩` through the dense trace, one row VJP at a time.
pub fn dense_entmax_gradients<T: Element>(
    inputs: &AttnInputs<T>,
    trace: &DenseTrace,
    d_o: &DenseMatrix,
    cfg: &AttnConfig,
) -> Result<GradBundle> {
    let n = inputs.n();
    if d_o.shape() != trace.o.shape() {
        return Err(Error::ShapeMismatch {
            what: "dO",
            expected: trace.o.shape(),
            found: d_o.shape(),
        });
    }
    let q = inputs.q().to_f64();
    let k = inputs.k().to_f64();
    let v = inputs.v().to_f64();
    let scale = cfg.resolved_scale(inputs.d());
    let dv = trace.p.transpose().matmul(d_o)?;
    let dp = d_o.matmul(&v.transpose())?;
    let mut ds = DenseMatrix::zeros(n, n);
    let mut delta = Vec::with_capacity(n);
    for r in 0..n {
        let len = visible(cfg.causal, r, n);
        let pr = ProbVector::new(trace.p.row(r)[..len].to_vec(), 1e-9)?;
        let dpr = &dp.row(r)[..len];
        let g = entmax_vjp(&pr, dpr, cfg.alpha)?;
        ds.row_mut(r)[..len].copy_from_slice(&g);
        let ur = &trace.u.row(r)[..len];
        let usum: f64 = ur.iter().sum();
        delta.push(ur.iter().zip(dpr).map(|(a, b)| a * b).sum::<f64>() / usum);
    }
    let dq = ds.matmul(&k)?.map(|x| scale * x);
    let dk = ds.transpose().matmul(&q)?.map(|x| scale * x);
    Ok(GradBundle {
        dq,
        dk,
        dv,
        delta,
        visited_blocks: 0,
    })
}

/// Central differences `(L(X + h e) - L(X - h e)) / 2h` for every entry.
pub fn finite_diff_gradient(
    mut loss: impl FnMut(&DenseMatrix) -> f64,
    x: &DenseMatrix,
    h: f64,
) -> Result<DenseMatrix> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!("step must be > 0, got {h}")));
    }
    let mut work = x.clone();
    let mut grad = DenseMatrix::zeros(x.rows(), x.cols());
    for idx in 0..x.as_slice().len() {
        let orig = x.as_slice()[idx];
        work.as_mut_slice()[idx] = orig + h;
        let up = loss(&work);
        work.as_mut_slice()[idx] = orig - h;
        let down = loss(&work);
        work.as_mut_slice()[idx] = orig;
        grad.as_mut_slice()[idx] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// `max|a - b| / max(1, max|a|, max|b|)`.
pub fn relative_error(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
    a.max_abs_diff(b) / 1f64.max(a.max_abs()).max(b.max_abs())
}

/// Smallest `|x - τ|` over the visible scaled scores of every row: how far
/// the instance is from a support change.
pub fn support_margin(trace: &DenseTrace, cfg: &AttnConfig) -> f64 {
    let n = trace.s.rows();
    (0..n)
        .flat_map(|r| {
            let t = trace.tau[r];
            trace.s.row(r)[..visible(cfg.causal, r, n)]
                .iter()
                .map(move |&s| ((cfg.alpha - 1.0) * s - t).abs())
        })
        .fold(f64::INFINITY, f64::min)
}
