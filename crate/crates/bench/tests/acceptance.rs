//! Acceptance criteria, one PASS/FAIL line each. Criteria run one after
//! another so the timing and allocation measurements see no other work.

use std::time::{Duration, Instant};

use entmax_attention::alloc_track::TrackingAllocator;
use entmax_attention::entmax::{eval_f_and_derivs, solve_traced, RootMethod};
use entmax_attention::oracle::{
    dense_entmax_attention, finite_diff_gradient, relative_error, support_margin,
};
use entmax_attention::{
    attention_backward, attention_forward, entmax_halley, entmax_vjp, AttnConfig, AttnInputs,
    DenseMatrix, Precision, LogitVector,
};
use entmax_bench::inputs::gaussian_matrix;
use entmax_bench::rng::Stream;
use entmax_bench::{gen_inputs, run_convergence_study, run_sparsity_sweep, BenchConfig, Method};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator::new();

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn c1_convergence() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;
    for seed in 0..5 {
        let cfg = BenchConfig {
            seq_lens: vec![8192],
            alpha: 1.5,
            sigma2: vec![1.0],
            seed,
            iters: 30,
            methods: vec![Method::Halley, Method::Bisection],
            ..Default::default()
        };
        let st = run_convergence_study(&cfg).expect("convergence study");
        let h3 = st.mae_at(Method::Halley, 3).unwrap();
        let h6 = st.mae_at(Method::Halley, 6).unwrap();
        let bis = st.curve(Method::Bisection);
        // Iterations until the bracket certifies τ to 1e-6.
        let certified = bis.iter().find(|r| r.bracket_width <= 1e-6).map_or(usize::MAX, |r| r.iteration);
        let by_mae = st.summary[1].iters_to_tol.unwrap_or(usize::MAX);
        let ok = h3 <= 1e-6 && h6 <= 1e-12 && certified >= 20;
        pass &= ok;
        notes.push(format!(
            "seed {seed}: halley mae@3={h3:.1e} mae@6={h6:.1e}; bisection bracket<=1e-6 at {certified}, mae<=1e-6 from {by_mae}"
        ));
    }
    outcome(pass, notes.join(" | "))
}

fn c2_oracle_equivalence() -> Outcome {
    let (mut worst64, mut worst32) = (0.0f64, 0.0f64);
    let mut count = 0;
    for &n in &[1usize, 7, 64, 257, 1024] {
        for &d in &[8usize, 64] {
            for &alpha in &[1.5, 2.0] {
                for &causal in &[false, true] {
                    for seed in 0..10 {
                        let inp = gen_inputs(n, d, 1.0, 1000 + seed).unwrap();
                        let c = AttnConfig::default().with_alpha(alpha).with_causal(causal).with_iters(10);
                        let want = dense_entmax_attention(&inp, &c).unwrap().o;
                        worst64 = worst64.max(attention_forward(&inp, &c).unwrap().o.max_abs_diff(&want));
                        let c32 = c.with_precision(Precision::Single);
                        let got = attention_forward(&inp.cast::<f32>(), &c32).unwrap().o;
                        worst32 = worst32.max(got.max_abs_diff(&want));
                        count += 1;
                    }
                }
            }
        }
    }
    outcome(
        worst64 <= 1e-10 && worst32 <= 1e-4,
        format!("{count} instances, max-abs double {worst64:.2e} (<= 1e-10), single {worst32:.2e} (<= 1e-4)"),
    )
}

fn half_sq_norm(inp: &AttnInputs, c: &AttnConfig) -> f64 {
    0.5 * attention_forward(inp, c).unwrap().o.norm_sq()
}

fn c3_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    let mut seed = 30_000u64;
    while checked < 200 {
        seed += 1;
        let n = rng.gen_range(2..=64);
        let d = rng.gen_range(1..=16);
        let alpha = if rng.gen_bool(0.5) { 1.5 } else { 2.0 };
        let c = AttnConfig::default()
            .with_alpha(alpha)
            .with_iters(10)
            .with_blocks(rng.gen_range(4..=32), rng.gen_range(4..=32))
            .with_causal(rng.gen_bool(0.5));
        let inp = gen_inputs(n, d, rng.gen_range(0.5..4.0), seed).unwrap();
        let big = inp.q().max_abs().max(inp.k().max_abs()).max(inp.v().max_abs());
        let h = 1e-5 * big;
        let trace = dense_entmax_attention(&inp, &c).unwrap();
        let reach = 4.0 * (alpha - 1.0) * c.resolved_scale(d) * h * big * d as f64;
        if support_margin(&trace, &c) <= reach {
            skipped += 1;
            continue;
        }
        let art = attention_forward(&inp, &c).unwrap();
        let g = attention_backward(&art.o.clone(), &inp, &art).unwrap();
        let (q, k, v) = inp.clone().into_parts();
        let fd = [
            finite_diff_gradient(|m| half_sq_norm(&AttnInputs::new(m.clone(), k.clone(), v.clone()).unwrap(), &c), &q, h),
            finite_diff_gradient(|m| half_sq_norm(&AttnInputs::new(q.clone(), m.clone(), v.clone()).unwrap(), &c), &k, h),
            finite_diff_gradient(|m| half_sq_norm(&AttnInputs::new(q.clone(), k.clone(), m.clone()).unwrap(), &c), &v, h),
        ];
        for (a, f) in [&g.dq, &g.dk, &g.dv].into_iter().zip(fd) {
            worst = worst.max(relative_error(a, &f.unwrap()));
        }
        checked += 1;
    }
    outcome(
        worst <= 1e-4,
        format!("{checked} instances ({skipped} near a support change skipped), worst rel. err {worst:.2e} (<= 1e-4)"),
    )
}

fn c4_mask_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut count_ok, mut skipped_any) = (0.0f64, true, 0);
    for k in 0..50u64 {
        let n = rng.gen_range(32..=384);
        let d = [8, 16, 32][rng.gen_range(0..3)];
        let b = [8, 16, 32][rng.gen_range(0..3)];
        let c = AttnConfig::default()
            .with_alpha(if rng.gen_bool(0.5) { 1.5 } else { 2.0 })
            .with_blocks(b, [8, 16, 32][rng.gen_range(0..3)])
            .with_causal(rng.gen_bool(0.5))
            .with_iters(rng.gen_range(1..=6));
        let inp = gen_inputs(n, d, [1.0, 3.0, 6.0][rng.gen_range(0..3)], 40_000 + k).unwrap();
        let d_o = gaussian_matrix(n, d, 1.0, 40_000 + k, Stream::Upstream);
        let masked = attention_forward(&inp, &c).unwrap();
        let full = attention_forward(&inp, &c.clone().with_skipping(false)).unwrap();
        let gm = attention_backward(&d_o, &inp, &masked).unwrap();
        let gf = attention_backward(&d_o, &inp, &full).unwrap();
        for (a, f) in [(&masked.o, &full.o), (&gm.dq, &gf.dq), (&gm.dk, &gf.dk), (&gm.dv, &gf.dv)] {
            worst = worst.max(a.max_abs_diff(f));
        }
        let ones = masked.mask.count_ones() as u64;
        let table_rows: usize = (0..masked.tables.t_r()).map(|i| masked.tables.key_blocks(i).len()).sum();
        count_ok &= masked.stats.visited_blocks == ones
            && table_rows as u64 == ones
            && gm.visited_blocks == 2 * ones;
        if ones < full.mask.count_ones() as u64 {
            skipped_any += 1;
        }
    }
    outcome(
        worst <= 1e-10 && count_ok,
        format!("50 instances ({skipped_any} with skipped blocks), max-abs {worst:.2e} (<= 1e-10), visited == popcount: {count_ok}"),
    )
}

fn c5_memory() -> Outcome {
    let (n, d) = (16_384, 64);
    let width = std::mem::size_of::<f64>();
    let c = AttnConfig::default();
    let inp = gen_inputs(n, d, 1.0, 5).unwrap();
    let d_o = gaussian_matrix(n, d, 1.0, 5, Stream::Upstream);
    let geom = c.geometry(n).unwrap();
    ALLOC.reset(n * n * width);
    let before = ALLOC.snapshot();
    let art = attention_forward(&inp, &c).unwrap();
    let after_fwd = ALLOC.snapshot();
    let grads = attention_backward(&d_o, &inp, &art).unwrap();
    let end = ALLOC.snapshot();
    let persistent = after_fwd.current - before.current - art.o.size_bytes();
    let bits = geom.t_r() * geom.t_c();
    let bound = 1.1 * (3 * n * d * width) as f64 + bits as f64 / 8.0;
    drop(grads);
    outcome(
        end.over_threshold == 0 && (persistent as f64) <= bound && art.aux_bytes() <= persistent,
        format!(
            "n={n} d={d}: allocations >= n^2*8 B: {}, largest {} B; persistent aux {persistent} B (bound {bound:.0} B), peak over inputs {} B",
            end.over_threshold, end.largest, end.peak - before.current
        ),
    )
}

fn c6_sparsity_leverage() -> Outcome {
    let cfg = BenchConfig {
        seq_lens: vec![4096],
        head_dim: 64,
        alpha: 1.5,
        sigma2: vec![0.1, 1.0, 6.0],
        repeats: 5,
        warmups: 2,
        methods: vec![Method::Blocked, Method::BlockedMasked],
        ..Default::default()
    };
    let rep = run_sparsity_sweep(&cfg).unwrap();
    let ratio = |s: f64| {
        let m = rep.find(Method::BlockedMasked, 4096, s)?.total_ms()?;
        let u = rep.find(Method::Blocked, 4096, s)?.total_ms()?;
        Some(m / u)
    };
    let frac = |s: f64| rep.find(Method::BlockedMasked, 4096, s).and_then(|r| r.visited_fraction());
    let (Some(r6), Some(r01), Some(f1), Some(f6)) = (ratio(6.0), ratio(0.1), frac(1.0), frac(6.0)) else {
        return outcome(false, format!("rows missing; withheld: {:?}", rep.rejected));
    };
    outcome(
        r6 <= 0.8 && r01 <= 1.2 && f6 < f1,
        format!(
            "n=4096 B=16: masked/unmasked fwd+bwd {r6:.3} at sigma2=6 (<= 0.8), {r01:.3} at sigma2=0.1 (<= 1.2); visited fraction {f6:.3} at sigma2=6 vs {f1:.3} at sigma2=1"
        ),
    )
}

fn random_logits(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<f64> {
    let n = rng.gen_range(1..=max_len);
    (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect()
}

fn random_alpha(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..3) {
        0 => 1.5,
        1 => 2.0,
        _ => rng.gen_range(1.05..=2.0),
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn c7_properties() -> Outcome {
    const TRIALS: usize = 1000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failed: Vec<&str> = Vec::new();
    let mut check = |name: &'static str, ok: bool| {
        if !ok && !failed.contains(&name) {
            failed.push(name);
        }
    };
    for _ in 0..TRIALS {
        let s = random_logits(&mut rng, 64);
        let alpha = random_alpha(&mut rng);
        let lv = LogitVector::new(s.clone(), alpha).unwrap();
        let (p, tau) = entmax_halley(&lv, 10).unwrap();

        let c: f64 = rng.gen_range(-50.0..50.0);
        let shifted: Vec<f64> = s.iter().map(|x| x + c).collect();
        let (ps, taus) = entmax_halley(&LogitVector::new(shifted, alpha).unwrap(), 10).unwrap();
        check(
            "shift invariance",
            max_abs_diff(p.values(), ps.values()) <= 1e-10
                && (taus - tau - (alpha - 1.0) * c).abs() <= 1e-9 * (1.0 + c.abs()),
        );

        let mut idx: Vec<usize> = (0..s.len()).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let permuted: Vec<f64> = idx.iter().map(|&i| s[i]).collect();
        let (pp, _) = entmax_halley(&LogitVector::new(permuted, alpha).unwrap(), 10).unwrap();
        check(
            "permutation equivariance",
            idx.iter().enumerate().all(|(k, &i)| (pp.values()[k] - p.values()[i]).abs() <= 1e-12),
        );

        check(
            "simplex membership",
            (p.sum() - 1.0).abs() <= 1e-6 && p.values().iter().all(|&x| x >= 0.0),
        );

        let iters = rng.gen_range(1..=12);
        let (pt, taut) = entmax_halley(&lv, iters).unwrap();
        check(
            "sparsity rule",
            pt.values().iter().zip(&s).all(|(&pi, &x)| pi >= 0.0 && (pi == 0.0) == ((alpha - 1.0) * x <= taut)),
        );

        let cot = rng.gen_range(-10.0..10.0);
        let ds = entmax_vjp(&p, &vec![cot; p.len()], alpha).unwrap();
        check("vjp null space", ds.iter().all(|x| x.abs() <= 1e-12 * (1.0 + cot.abs())));

        let scaled = lv.scaled();
        let mut prev = f64::INFINITY;
        let mut sound = true;
        solve_traced(&scaled, alpha, 12, RootMethod::HalleyBisection, |st| {
            let f_lo = eval_f_and_derivs(&scaled, st.tau_lo, alpha).unwrap().0;
            let f_hi = eval_f_and_derivs(&scaled, st.tau_hi, alpha).unwrap().0;
            sound &= f_lo >= 0.0 && f_hi <= 0.0 && st.tau_lo <= st.tau && st.tau <= st.tau_hi;
            sound &= st.width() <= prev;
            prev = st.width();
        })
        .unwrap();
        check("bracket soundness", sound);

        let n = rng.gen_range(1..=80);
        let d = rng.gen_range(1..=16);
        let inp = AttnInputs::new(
            random_matrix(&mut rng, n, d),
            random_matrix(&mut rng, n, d),
            random_matrix(&mut rng, n, d),
        )
        .unwrap();
        let base = AttnConfig::default()
            .with_alpha(alpha)
            .with_iters(10)
            .with_causal(rng.gen_bool(0.5));
        let mut blocks = || (rng.gen_range(1..=40), rng.gen_range(1..=40));
        let (a, b) = (blocks(), blocks());
        let oa = attention_forward(&inp, &base.clone().with_blocks(a.0, a.1)).unwrap().o;
        let ob = attention_forward(&inp, &base.with_blocks(b.0, b.1)).unwrap().o;
        check("block-size independence", oa.max_abs_diff(&ob) <= 1e-10);
    }
    let names = "shift, permutation, simplex, sparsity rule, vjp null space, bracket, block size";
    if failed.is_empty() {
        outcome(true, format!("{TRIALS} trials each of {names}"))
    } else {
        outcome(false, format!("{TRIALS} trials; failing: {}", failed.join(", ")))
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-2.0..2.0))
}

fn c8_declared() -> Outcome {
    outcome(
        true,
        "not reproduced at desk scale and not used by any criterion: model-quality tables, GPU kernel comparisons against fused softmax attention, training-time measurements, absolute GPU runtimes".into(),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome, Option<Duration>);
    let criteria: [Criterion; 8] = [
        ("C1 convergence", c1_convergence, Some(Duration::from_secs(5))),
        ("C2 oracle equivalence", c2_oracle_equivalence, Some(Duration::from_secs(120))),
        ("C3 gradient correctness", c3_gradients, Some(Duration::from_secs(120))),
        ("C4 mask/table exactness", c4_mask_exactness, Some(Duration::from_secs(60))),
        ("C5 memory contract", c5_memory, Some(Duration::from_secs(60))),
        ("C6 sparsity leverage", c6_sparsity_leverage, None),
        ("C7 property suite", c7_properties, Some(Duration::from_secs(120))),
        ("C8 declared non-reproducible", c8_declared, None),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (name, run, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let out = run();
        let took = t0.elapsed();
        let in_time = limit.map_or(true, |l| took < l);
        let pass = out.pass && in_time;
        failures += usize::from(!pass);
        let budget = limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
        println!(
            "{} {name}: {} [{:.1}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64()
        );
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
