use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use entmax_attention::Precision;
use entmax_bench::gate::{gradients_without_delta, standard_gradients};
use entmax_bench::inputs::gen_inputs;
use entmax_bench::report::{bench_table, convergence_table, render_table, write_bench_csv, write_convergence_csv};
use entmax_bench::tensor_io::write_tensor;
use entmax_bench::{
    run_convergence_study, run_correctness_gate_with, run_sparsity_sweep, BenchConfig, BenchError,
    Method,
};

#[derive(Parser)]
#[command(name = "entmax-bench", version, about = "Convergence, sparsity sweeps and correctness gates for entmax attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-iteration MAE of the row solvers against exact entmax.
    Converge(CommonArgs),
    /// Timed forward/backward over sequence lengths and query variances.
    Sweep(CommonArgs),
    /// Oracle, finite-difference, mask and edge-case checks.
    Gate(GateArgs),
    /// Write Q, K, V for the first n and sigma2 as ATN1 files into --out.
    Gen(CommonArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    Single,
    Double,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    /// Drop the δ term from the score gradient.
    SkipDelta,
}

#[derive(Args)]
struct CommonArgs {
    /// Sequence lengths (repeatable or comma separated).
    #[arg(long = "n", value_delimiter = ',')]
    n: Vec<usize>,
    /// Head dimension.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Query variances (repeatable or comma separated).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    sigma2: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Solver iterations; for `converge`, the number of traced iterations.
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    block_rows: Option<usize>,
    #[arg(long)]
    block_cols: Option<usize>,
    #[arg(long)]
    causal: bool,
    #[arg(long, value_enum, default_value = "double")]
    precision: PrecisionArg,
    /// Output file (directory for `gen`); stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    warmups: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    methods: Vec<Method>,
    /// MAE threshold for iters_to_tol.
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Args)]
struct GateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Run the gate against a deliberately broken backward pass.
    #[arg(long, value_enum)]
    inject_fault: Option<Fault>,
}

enum Failure {
    Gate,
    Config(BenchError),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        Failure::Config(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Config(e.into())
    }
}

struct Defaults {
    n: &'static [usize],
    d: usize,
    sigma2: &'static [f64],
    iters: usize,
    methods: &'static [Method],
}

fn build_config(a: &CommonArgs, def: Defaults) -> BenchConfig {
    let base = BenchConfig::default();
    BenchConfig {
        seq_lens: if a.n.is_empty() { def.n.to_vec() } else { a.n.clone() },
        head_dim: a.d.unwrap_or(def.d),
        alpha: a.alpha.unwrap_or(base.alpha),
        sigma2: if a.sigma2.is_empty() { def.sigma2.to_vec() } else { a.sigma2.clone() },
        seed: a.seed,
        iters: a.iters.unwrap_or(def.iters),
        block_rows: a.block_rows.unwrap_or(base.block_rows),
        block_cols: a.block_cols.unwrap_or(base.block_cols),
        causal: a.causal,
        precision: match a.precision {
            PrecisionArg::Single => Precision::Single,
            PrecisionArg::Double => Precision::Double,
        },
        repeats: a.repeats.unwrap_or(base.repeats),
        warmups: a.warmups.unwrap_or(base.warmups),
        methods: if a.methods.is_empty() { def.methods.to_vec() } else { a.methods.clone() },
        tol: a.tol.unwrap_or(base.tol),
    }
}

fn output(path: &Option<PathBuf>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Converge(a) => {
            let cfg = build_config(&a, Defaults {
                n: &[8192],
                d: 64,
                sigma2: &[1.0],
                iters: 30,
                methods: &[Method::Halley, Method::Bisection],
            });
            let study = run_convergence_study(&cfg)?;
            let mut out = output(&a.out)?;
            match a.format {
                Format::Csv => write_convergence_csv(&mut out, &study.curves)?,
                Format::Table => {
                    out.write_all(convergence_table(&study.curves).as_bytes())?;
                    out.write_all(b"\n")?;
                    out.write_all(bench_table(&study.summary).as_bytes())?;
                }
            }
            out.flush()?;
        }
        Command::Sweep(a) => {
            let cfg = build_config(&a, Defaults {
                n: &[2048],
                d: 64,
                sigma2: &[0.1, 1.0, 6.0],
                iters: 3,
                methods: &[Method::Blocked, Method::BlockedMasked],
            });
            let report = run_sparsity_sweep(&cfg)?;
            for r in &report.rejected {
                eprintln!(
                    "withheld {} n={} sigma2={} seed={}: output error {:.3e}",
                    r.method, r.n, r.sigma2, r.seed, r.error
                );
            }
            let mut out = output(&a.out)?;
            match a.format {
                Format::Csv => write_bench_csv(&mut out, &report.rows)?,
                Format::Table => out.write_all(bench_table(&report.rows).as_bytes())?,
            }
            out.flush()?;
            if !report.rejected.is_empty() {
                return Err(Failure::Gate);
            }
        }
        Command::Gate(g) => {
            let a = &g.common;
            let cfg = build_config(a, Defaults {
                n: &[1, 7, 64, 257],
                d: 16,
                sigma2: &[1.0],
                iters: 3,
                methods: &[Method::Blocked, Method::BlockedMasked],
            });
            let grads = match g.inject_fault {
                Some(Fault::SkipDelta) => gradients_without_delta,
                None => standard_gradients,
            };
            let report = run_correctness_gate_with(&cfg, grads)?;
            let mut out = output(&a.out)?;
            match a.format {
                Format::Table => out.write_all(report.render().as_bytes())?,
                Format::Csv => {
                    let mut w = csv::WriterBuilder::new()
                        .terminator(csv::Terminator::Any(b'\n'))
                        .from_writer(&mut out);
                    w.write_record(["check", "instances", "failures", "worst", "passed"])
                        .map_err(BenchError::from)?;
                    for c in &report.checks {
                        w.write_record([
                            c.name.to_string(),
                            c.instances.to_string(),
                            c.failures.len().to_string(),
                            format!("{:e}", c.worst),
                            c.passed().to_string(),
                        ])
                        .map_err(BenchError::from)?;
                    }
                    w.flush()?;
                }
            }
            out.flush()?;
            if !report.passed() {
                if a.format == Format::Csv {
                    eprint!("{}", report.render());
                }
                return Err(Failure::Gate);
            }
        }
        Command::Gen(a) => {
            let cfg = build_config(&a, Defaults {
                n: &[1024],
                d: 64,
                sigma2: &[1.0],
                iters: 3,
                methods: &[Method::Blocked],
            });
            let dir = a
                .out
                .clone()
                .ok_or_else(|| BenchError::Config("gen needs --out <directory>".into()))?;
            std::fs::create_dir_all(&dir)?;
            let inputs = gen_inputs(cfg.seq_lens[0], cfg.head_dim, cfg.sigma2[0], cfg.seed)?;
            let mut listing = Vec::new();
            for (name, m) in [("q", inputs.q()), ("k", inputs.k()), ("v", inputs.v())] {
                let path = dir.join(format!("{name}.atn"));
                let mut w = BufWriter::new(File::create(&path)?);
                write_tensor(&mut w, m, cfg.precision)?;
                w.flush()?;
                listing.push(vec![name.to_string(), format!("{}x{}", m.rows(), m.cols()), path.display().to_string()]);
            }
            print!("{}", render_table(&["tensor", "shape", "path"], &listing));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Gate) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
