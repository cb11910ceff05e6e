//! Correctness gate: oracle, finite-difference, mask and edge-case suites
//! behind one pass/fail report.

use std::fmt::Write as _;

use entmax_attention::backward::attention_backward_with_delta;
use entmax_attention::oracle::{
    dense_entmax_attention, finite_diff_gradient, relative_error, support_margin,
};
use entmax_attention::{
    attention_backward, attention_forward, entmax15_exact, entmax_halley, sparsemax_exact,
    AttnConfig, AttnInputs, DenseMatrix, ForwardArtifacts, GradBundle, LogitVector, Precision,
};

use crate::config::BenchConfig;
use crate::error::Result;
use crate::inputs::{gaussian_matrix, gen_inputs, gen_logits};
use crate::rng::Stream;

/// Backward pass under test.
pub type GradFn =
    fn(&DenseMatrix, &AttnInputs, &ForwardArtifacts) -> entmax_attention::Result<GradBundle>;

pub fn standard_gradients(
    d_o: &DenseMatrix,
    inputs: &AttnInputs,
    art: &ForwardArtifacts,
) -> entmax_attention::Result<GradBundle> {
    attention_backward(d_o, inputs, art)
}

/// Deliberately broken backward that drops the δ correction.
pub fn gradients_without_delta(
    d_o: &DenseMatrix,
    inputs: &AttnInputs,
    art: &ForwardArtifacts,
) -> entmax_attention::Result<GradBundle> {
    attention_backward_with_delta(d_o, inputs, art, vec![0.0; inputs.n()])
}

pub const SOLVER_TOL: f64 = 1e-10;
pub const FD_TOL: f64 = 1e-4;
pub const MASK_TOL: f64 = 1e-10;
pub const EDGE_TOL: f64 = 1e-12;
const CHECK_ITERS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct GateFailure {
    /// Seed that reproduces the instance.
    pub seed: u64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateCheck {
    pub name: &'static str,
    pub instances: usize,
    /// Largest error seen, in the check's own metric.
    pub worst: f64,
    pub failures: Vec<GateFailure>,
}

impl GateCheck {
    fn new(name: &'static str) -> Self {
        Self { name, instances: 0, worst: 0.0, failures: Vec::new() }
    }

    fn record(&mut self, seed: u64, err: f64, tol: f64, what: impl FnOnce() -> String) {
        self.instances += 1;
        self.worst = self.worst.max(err);
        if !(err <= tol) {
            self.failures.push(GateFailure { seed, detail: format!("{}: {err:.3e} > {tol:e}", what()) });
        }
    }

    fn fail(&mut self, seed: u64, detail: String) {
        self.failures.push(GateFailure { seed, detail });
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.instances > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GateReport {
    pub checks: Vec<GateCheck>,
}

impl GateReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(GateCheck::passed)
    }

    pub fn check(&self, name: &str) -> Option<&GateCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let verdict = if c.passed() { "PASS" } else { "FAIL" };
            let _ = writeln!(
                out,
                "{verdict} {:<10} instances={:<4} worst={:.3e}",
                c.name, c.instances, c.worst
            );
            for f in &c.failures {
                let _ = writeln!(out, "    seed {}: {}", f.seed, f.detail);
            }
        }
        let _ = writeln!(out, "{}", if self.passed() { "gate: PASS" } else { "gate: FAIL" });
        out
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn solver_check(seed: u64) -> Result<GateCheck> {
    let mut check = GateCheck::new("solver");
    for (k, n) in [2usize, 3, 17, 256].into_iter().cycle().take(40).enumerate() {
        let s = seed.wrapping_add(k as u64);
        let logits = gen_logits(n, 1.0 + (k % 4) as f64, s);
        for (alpha, exact) in [(1.5, entmax15_exact(&logits)?), (2.0, sparsemax_exact(&logits)?)] {
            let (p, tau) = entmax_halley(&LogitVector::new(logits.clone(), alpha)?, CHECK_ITERS)?;
            let err = max_abs_diff(p.values(), exact.0.values()).max((tau - exact.1).abs());
            check.record(s, err, SOLVER_TOL, || format!("n={n} alpha={alpha}"));
            let rule = p
                .values()
                .iter()
                .zip(&logits)
                .all(|(&pi, &x)| (pi == 0.0) == ((alpha - 1.0) * x <= tau));
            if !rule {
                check.fail(s, format!("n={n} alpha={alpha}: sparsity rule violated"));
            }
        }
    }
    Ok(check)
}

fn forward_check(cfg: &BenchConfig) -> Result<GateCheck> {
    let mut check = GateCheck::new("forward");
    let tol = match cfg.precision {
        Precision::Double => 1e-10,
        Precision::Single => 1e-4,
    };
    for &n in &cfg.seq_lens {
        for alpha in [1.5, 2.0] {
            for causal in [false, true] {
                for k in 0..2 {
                    let s = cfg.seed.wrapping_add(k);
                    let inp = gen_inputs(n, cfg.head_dim, 1.0, s)?;
                    let c = cfg.attn_config().with_alpha(alpha).with_causal(causal).with_iters(CHECK_ITERS);
                    let want = dense_entmax_attention(&inp, &c)?.o;
                    let err = match cfg.precision {
                        Precision::Double => attention_forward(&inp, &c)?.o.max_abs_diff(&want),
                        Precision::Single => attention_forward(&inp.cast::<f32>(), &c)?.o.max_abs_diff(&want),
                    };
                    check.record(s, err, tol, || format!("n={n} alpha={alpha} causal={causal}"));
                }
            }
        }
    }
    Ok(check)
}

fn half_sq_norm(inp: &AttnInputs, c: &AttnConfig) -> f64 {
    attention_forward(inp, c).map_or(f64::NAN, |a| 0.5 * a.o.norm_sq())
}

fn gradient_check(seed: u64, grads: GradFn, instances: usize) -> Result<GateCheck> {
    let mut check = GateCheck::new("gradient");
    let mut s = seed;
    let mut attempts = 0;
    while check.instances < instances && attempts < 20 * instances {
        attempts += 1;
        s = s.wrapping_add(1);
        let n = 4 + (s % 13) as usize;
        let d = 2 + (s % 3) as usize;
        let alpha = if s % 2 == 0 { 1.5 } else { 2.0 };
        let c = AttnConfig::default()
            .with_alpha(alpha)
            .with_iters(CHECK_ITERS)
            .with_blocks(4, 4)
            .with_causal(s % 3 == 0);
        let inp = gen_inputs(n, d, 1.5, s)?;
        let big = inp.q().max_abs().max(inp.k().max_abs()).max(inp.v().max_abs());
        let h = 1e-5 * big;
        // Skip instances close enough to a support change for the
        // perturbation to cross it.
        let trace = dense_entmax_attention(&inp, &c)?;
        let reach = 4.0 * (alpha - 1.0) * c.resolved_scale(d) * h * big * d as f64;
        if support_margin(&trace, &c) <= reach {
            continue;
        }
        let art = attention_forward(&inp, &c)?;
        let g = grads(&art.o.clone(), &inp, &art)?;
        let (q, k, v) = inp.clone().into_parts();
        let fd_q = finite_diff_gradient(|m| half_sq_norm(&AttnInputs::new(m.clone(), k.clone(), v.clone()).unwrap(), &c), &q, h)?;
        let fd_k = finite_diff_gradient(|m| half_sq_norm(&AttnInputs::new(q.clone(), m.clone(), v.clone()).unwrap(), &c), &k, h)?;
        let fd_v = finite_diff_gradient(|m| half_sq_norm(&AttnInputs::new(q.clone(), k.clone(), m.clone()).unwrap(), &c), &v, h)?;
        let errs = [
            ("dQ", relative_error(&g.dq, &fd_q)),
            ("dK", relative_error(&g.dk, &fd_k)),
            ("dV", relative_error(&g.dv, &fd_v)),
        ];
        let (name, err) = errs.into_iter().fold(("dQ", 0.0), |a, b| if b.1 > a.1 { b } else { a });
        check.record(s, err, FD_TOL, || format!("n={n} d={d} alpha={alpha} worst {name}"));
    }
    Ok(check)
}

fn mask_check(cfg: &BenchConfig, grads: GradFn) -> Result<GateCheck> {
    let mut check = GateCheck::new("mask");
    for k in 0..5u64 {
        let s = cfg.seed.wrapping_add(100 + k);
        let n = 96 + 16 * k as usize;
        let c = AttnConfig::default()
            .with_alpha(cfg.alpha)
            .with_blocks(16, 16)
            .with_causal(k % 2 == 1);
        let inp = gen_inputs(n, 16, 6.0, s)?;
        let d_o = gaussian_matrix(n, 16, 1.0, s, Stream::Upstream);
        let masked = attention_forward(&inp, &c)?;
        let full = attention_forward(&inp, &c.clone().with_skipping(false))?;
        let gm = grads(&d_o, &inp, &masked)?;
        let gf = grads(&d_o, &inp, &full)?;
        let err = [
            masked.o.max_abs_diff(&full.o),
            gm.dq.max_abs_diff(&gf.dq),
            gm.dk.max_abs_diff(&gf.dk),
            gm.dv.max_abs_diff(&gf.dv),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        check.record(s, err, MASK_TOL, || format!("n={n} masked vs unmasked"));
        let ones = masked.mask.count_ones() as u64;
        if masked.stats.visited_blocks != ones || gm.visited_blocks != 2 * ones {
            check.fail(
                s,
                format!(
                    "visited forward {} backward {} for {ones} mask bits",
                    masked.stats.visited_blocks, gm.visited_blocks
                ),
            );
        }
    }
    Ok(check)
}

fn edge_check(cfg: &BenchConfig, grads: GradFn) -> Result<GateCheck> {
    let mut check = GateCheck::new("edge_n1");
    for causal in [false, true] {
        let inp = gen_inputs(1, cfg.head_dim, 1.0, cfg.seed)?;
        let c = cfg.attn_config().with_causal(causal).with_precision(Precision::Double);
        let art = attention_forward(&inp, &c)?;
        let d_o = gaussian_matrix(1, cfg.head_dim, 1.0, cfg.seed, Stream::Upstream);
        let g = grads(&d_o, &inp, &art)?;
        let err = [
            art.o.max_abs_diff(inp.v()),
            g.dq.max_abs(),
            g.dk.max_abs(),
            g.dv.max_abs_diff(&d_o),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        check.record(cfg.seed, err, EDGE_TOL, || format!("n=1 causal={causal}"));
    }
    Ok(check)
}

/// Number of finite-difference instances the gate evaluates.
pub const GATE_FD_INSTANCES: usize = 12;

pub fn run_correctness_gate(cfg: &BenchConfig) -> Result<GateReport> {
    run_correctness_gate_with(cfg, standard_gradients)
}

/// Gate with a substitute backward pass, for validating the gate itself.
pub fn run_correctness_gate_with(cfg: &BenchConfig, grads: GradFn) -> Result<GateReport> {
    cfg.validate_gate()?;
    Ok(GateReport {
        checks: vec![
            solver_check(cfg.seed)?,
            forward_check(cfg)?,
            gradient_check(cfg.seed, grads, GATE_FD_INSTANCES)?,
            mask_check(cfg, grads)?,
            edge_check(cfg, grads)?,
        ],
    })
}
