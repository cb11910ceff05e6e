//! Sparse α-entmax attention for long sequences.
//!
//! The crate provides
//!
//! * [`entmax`]: threshold solvers for α-entmax on a single vector (exact
//!   sort-based sparsemax and 1.5-entmax, bisection, and a Halley-bisection
//!   hybrid) plus the Jacobian-vector product;
//! * [`forward`] and [`backward`]: tiled attention passes that never hold an
//!   `n × n` matrix and skip tiles whose weights are all zero;
//! * [`sparsity`]: the block mask and the lookup tables that drive skipping;
//! * [`oracle`]: dense reference implementations used for testing.
//!
//! ```
//! use entmax_attention::{attention_forward, AttnConfig, AttnInputs, DenseMatrix};
//!
//! let n = 8;
//! let q = DenseMatrix::from_fn(n, 4, |i, j| ((i * 4 + j) as f64 * 0.7).sin());
//! let v = DenseMatrix::from_fn(n, 4, |i, _| i as f64);
//! let inputs = AttnInputs::new(q.clone(), q, v).unwrap();
//! let out = attention_forward(&inputs, &AttnConfig::default()).unwrap();
//! assert_eq!(out.o.shape(), (n, 4));
//! ```

pub mod alloc_track;
pub mod backward;
pub mod entmax;
mod error;
pub mod forward;
mod kernel;
pub mod matrix;
pub mod oracle;
pub mod sparsity;

pub use backward::{attention_backward, backward_dkdv, backward_dq, compute_delta, GradBundle};
pub use entmax::{
    entmax15_exact, entmax_bisection, entmax_halley, entmax_vjp, sparsemax_exact, LogitVector,
    ProbVector,
};
pub use error::{Error, Result, MIN_ALPHA_GAP};
pub use forward::{
    attention_forward, attention_forward_heads, attention_forward_with_mask, compute_tau_blocked,
    compute_tau_blocked_into, forward_blocked, AttnConfig, AttnInputs, ForwardArtifacts,
    KernelStats, TauVector,
};
pub use matrix::{DenseMatrix, Element, Precision};
pub use sparsity::{build_tables, mask_density, BlockGeometry, BlockMask, LookupTables};
