//! Timed forward/backward runs over a grid of sequence lengths and query
//! variances.

use std::time::Instant;

use entmax_attention::oracle::{dense_entmax_attention, dense_entmax_gradients, dense_softmax_attention, reference_entmax, ORACLE_CAP};
use entmax_attention::{
    attention_backward, attention_forward, entmax_halley, AttnConfig, AttnInputs, DenseMatrix,
    Element, ForwardArtifacts, LogitVector, Precision,
};

use crate::config::{BenchConfig, Method};
use crate::error::Result;
use crate::inputs::{gaussian_matrix, gen_inputs};
use crate::report::BenchRow;
use crate::rng::Stream;

/// Largest accepted max-abs gap between a method's output and its reference.
pub fn output_tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::Double => 1e-9,
        Precision::Single => 1e-4,
    }
}

/// A row withheld because its output disagreed with the reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub method: Method,
    pub n: usize,
    pub sigma2: f64,
    pub seed: u64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub rows: Vec<BenchRow>,
    pub rejected: Vec<Rejection>,
}

impl SweepReport {
    pub fn find(&self, method: Method, n: usize, sigma2: f64) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.n == n && r.sigma2 == sigma2)
    }
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn timed<R>(f: impl FnOnce() -> R) -> (R, f64) {
    let t0 = Instant::now();
    let r = f();
    (r, t0.elapsed().as_secs_f64() * 1e3)
}

/// Row-by-row dense references, computed without an `n × n` buffer.
struct RowReference {
    /// Halley-bisection with the same `T` as the kernels.
    same_iters: DenseMatrix,
    exact: Option<DenseMatrix>,
    softmax: Option<DenseMatrix>,
    exact_zeros: u64,
    softmax_zeros: u64,
}

fn row_reference(inputs: &AttnInputs, cfg: &AttnConfig, exact: bool, softmax: bool) -> Result<RowReference> {
    let (n, d) = (inputs.n(), inputs.d());
    let scale = cfg.resolved_scale(d);
    let mut out = RowReference {
        same_iters: DenseMatrix::zeros(n, d),
        exact: exact.then(|| DenseMatrix::zeros(n, d)),
        softmax: softmax.then(|| DenseMatrix::zeros(n, d)),
        exact_zeros: 0,
        softmax_zeros: 0,
    };
    let accumulate = |o: &mut DenseMatrix, r: usize, p: &[f64]| {
        for (c, &w) in p.iter().enumerate() {
            if w != 0.0 {
                for (x, &vx) in o.row_mut(r).iter_mut().zip(inputs.v().row(c)) {
                    *x += w * vx;
                }
            }
        }
    };
    for r in 0..n {
        let len = if cfg.causal { r + 1 } else { n };
        let q = inputs.q().row(r);
        let s: Vec<f64> = (0..len)
            .map(|c| scale * q.iter().zip(inputs.k().row(c)).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let (p, _) = entmax_halley(&LogitVector::new(s.clone(), cfg.alpha)?, cfg.iters)?;
        accumulate(&mut out.same_iters, r, p.values());
        if let Some(o) = out.exact.as_mut() {
            let (p, _) = reference_entmax(&s, cfg.alpha)?;
            out.exact_zeros += p.values().iter().filter(|&&x| x == 0.0).count() as u64;
            accumulate(o, r, p.values());
        }
        if let Some(o) = out.softmax.as_mut() {
            let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = s.iter().map(|x| (x - max).exp()).collect();
            let z: f64 = e.iter().sum();
            let p: Vec<f64> = e.iter().map(|x| x / z).collect();
            out.softmax_zeros += p.iter().filter(|&&x| x == 0.0).count() as u64;
            accumulate(o, r, &p);
        }
    }
    Ok(out)
}

fn valid_entries(n: usize, causal: bool) -> u64 {
    let n = n as u64;
    if causal {
        n * (n + 1) / 2
    } else {
        n * n
    }
}

fn structural_blocks(cfg: &AttnConfig, n: usize) -> Result<u64> {
    let g = cfg.geometry(n)?;
    let mut count = 0u64;
    for i in 0..g.t_r() {
        for j in 0..g.t_c() {
            if !(cfg.causal && g.above_diagonal(i, j)) {
                count += 1;
            }
        }
    }
    Ok(count)
}

struct Measured {
    fwd: Vec<f64>,
    bwd: Vec<f64>,
    o: DenseMatrix,
    aux_bytes: usize,
    visited: u64,
    kernel_sparsity: f64,
}

fn measure_blocked<T: Element>(
    inputs: &AttnInputs<T>,
    d_o: &DenseMatrix<T>,
    attn: &AttnConfig,
    cfg: &BenchConfig,
) -> Result<Measured> {
    let mut fwd = Vec::with_capacity(cfg.repeats);
    let mut bwd = Vec::with_capacity(cfg.repeats);
    let mut last: Option<ForwardArtifacts<T>> = None;
    for run in 0..cfg.warmups + cfg.repeats {
        let (art, tf) = timed(|| attention_forward(inputs, attn));
        let art = art?;
        let (grads, tb) = timed(|| attention_backward(d_o, inputs, &art));
        grads?;
        if run >= cfg.warmups {
            fwd.push(tf);
            bwd.push(tb);
        }
        last = Some(art);
    }
    let art = last.expect("at least one run");
    Ok(Measured {
        fwd,
        bwd,
        o: art.o.to_f64(),
        aux_bytes: art.aux_bytes() + entmax_attention::forward::key_panel_bytes(inputs),
        visited: art.stats.visited_blocks,
        kernel_sparsity: art.attn_sparsity(),
    })
}

/// Runs every `(n, σ², method)` combination in order. Rows whose output
/// disagrees with the reference go to `rejected` instead of `rows`.
///
/// Runs happen one at a time, so no two timing rows overlap.
pub fn run_sparsity_sweep(cfg: &BenchConfig) -> Result<SweepReport> {
    cfg.validate_sweep()?;
    let mut report = SweepReport::default();
    let tol = output_tolerance(cfg.precision);
    for &n in &cfg.seq_lens {
        let d = cfg.head_dim;
        for &sigma2 in &cfg.sigma2 {
            let attn = cfg.attn_config();
            let inputs = gen_inputs(n, d, sigma2, cfg.seed)?;
            let d_o = gaussian_matrix(n, d, 1.0, cfg.seed, Stream::Upstream);
            // Single-precision kernels are checked against the rounded inputs.
            let seen = match cfg.precision {
                Precision::Double => inputs.clone(),
                Precision::Single => inputs.cast::<f32>().cast::<f64>(),
            };
            let reference = if n <= ORACLE_CAP {
                Some(row_reference(
                    &seen,
                    &attn,
                    true,
                    cfg.methods.contains(&Method::DenseSoftmax),
                )?)
            } else {
                None
            };
            let base = BenchRow {
                method: Method::Blocked,
                n,
                d: Some(d),
                alpha: cfg.alpha,
                sigma2,
                seed: cfg.seed,
                fwd_ms: None,
                bwd_ms: None,
                iters_to_tol: None,
                peak_aux_bytes: None,
                visited_blocks: None,
                total_blocks: None,
                attn_sparsity: None,
            };
            for &method in &cfg.methods {
                let (row, output, want) = match method {
                    Method::Blocked | Method::BlockedMasked => {
                        let attn = attn.clone().with_skipping(method == Method::BlockedMasked);
                        let m = match cfg.precision {
                            Precision::Double => measure_blocked(&inputs, &d_o, &attn, cfg)?,
                            Precision::Single => {
                                measure_blocked(&inputs.cast::<f32>(), &d_o.cast::<f32>(), &attn, cfg)?
                            }
                        };
                        let sparsity = match &reference {
                            Some(r) => 1.0 - (valid_entries(n, cfg.causal) - r.exact_zeros) as f64 / valid_entries(n, cfg.causal) as f64,
                            None => m.kernel_sparsity,
                        };
                        let row = BenchRow {
                            method,
                            fwd_ms: Some(median(m.fwd)),
                            bwd_ms: Some(median(m.bwd)),
                            peak_aux_bytes: Some(m.aux_bytes as u64),
                            visited_blocks: Some(m.visited),
                            total_blocks: Some(structural_blocks(&attn, n)?),
                            attn_sparsity: Some(sparsity),
                            ..base.clone()
                        };
                        (row, m.o, reference.as_ref().map(|r| &r.same_iters))
                    }
                    Method::DenseOracle => {
                        let mut fwd = Vec::new();
                        let mut bwd = Vec::new();
                        let mut last = None;
                        for run in 0..cfg.warmups + cfg.repeats {
                            let (trace, tf) = timed(|| dense_entmax_attention(&seen, &attn));
                            let trace = trace?;
                            let (g, tb) = timed(|| dense_entmax_gradients(&seen, &trace, &d_o, &attn));
                            g?;
                            if run >= cfg.warmups {
                                fwd.push(tf);
                                bwd.push(tb);
                            }
                            last = Some(trace);
                        }
                        let trace = last.expect("at least one run");
                        let zeros = trace.p.as_slice().iter().filter(|&&x| x == 0.0).count() as u64;
                        let hidden = (n * n) as u64 - valid_entries(n, cfg.causal);
                        let row = BenchRow {
                            method,
                            fwd_ms: Some(median(fwd)),
                            bwd_ms: Some(median(bwd)),
                            peak_aux_bytes: Some((3 * n * n + n) as u64 * 8),
                            attn_sparsity: Some((zeros - hidden) as f64 / valid_entries(n, cfg.causal) as f64),
                            ..base.clone()
                        };
                        (row, trace.o, reference.as_ref().and_then(|r| r.exact.as_ref()))
                    }
                    Method::DenseSoftmax => {
                        let mut fwd = Vec::new();
                        let mut o = None;
                        for run in 0..cfg.warmups + cfg.repeats {
                            let (out, tf) = timed(|| dense_softmax_attention(&seen, &attn));
                            o = Some(out?);
                            if run >= cfg.warmups {
                                fwd.push(tf);
                            }
                        }
                        let r = reference.as_ref().expect("dense methods are capped");
                        let row = BenchRow {
                            method,
                            fwd_ms: Some(median(fwd)),
                            peak_aux_bytes: Some((2 * n * n) as u64 * 8),
                            attn_sparsity: Some(r.softmax_zeros as f64 / valid_entries(n, cfg.causal) as f64),
                            ..base.clone()
                        };
                        (row, o.expect("at least one run"), r.softmax.as_ref())
                    }
                    Method::Halley | Method::Bisection => unreachable!("rejected by validation"),
                };
                match want {
                    Some(want) if !(output.max_abs_diff(want) <= tol) => {
                        report.rejected.push(Rejection {
                            method,
                            n,
                            sigma2,
                            seed: cfg.seed,
                            error: output.max_abs_diff(want),
                        });
                    }
                    _ => report.rows.push(row),
                }
            }
        }
    }
    Ok(report)
}
