//! Benchmark and verification harness for `entmax-attention`.
//!
//! - [`run_convergence_study`]: per-iteration error of Halley-bisection and
//!   bisection against exact entmax.
//! - [`run_sparsity_sweep`]: timed forward/backward runs over sequence
//!   lengths and query variances, with block-visit counts.
//! - [`run_correctness_gate`]: oracle, finite-difference, mask and edge
//!   suites as one pass/fail report.
//!
//! Inputs come from a Philox4x32-10 stream ([`rng`]), so a seed fixes every
//! tensor bit for bit.

pub mod config;
pub mod converge;
mod error;
pub mod gate;
pub mod inputs;
pub mod report;
pub mod rng;
pub mod sweep;
pub mod tensor_io;

pub use config::{BenchConfig, Method};
pub use converge::{run_convergence_study, ConvergenceStudy};
pub use error::{BenchError, Result};
pub use gate::{run_correctness_gate, run_correctness_gate_with, GateReport};
pub use inputs::gen_inputs;
pub use report::{BenchRow, ConvergenceRow};
pub use sweep::{run_sparsity_sweep, SweepReport};
