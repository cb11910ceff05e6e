use std::fmt;

use clap::ValueEnum;
use entmax_attention::oracle::ORACLE_CAP;
use entmax_attention::{AttnConfig, Precision};
use serde::Serialize;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Row solver, Halley-bisection.
    Halley,
    /// Row solver, plain bisection.
    Bisection,
    /// Tiled attention visiting every causally allowed block.
    Blocked,
    /// Tiled attention skipping null blocks.
    #[value(name = "blocked_masked")]
    BlockedMasked,
    /// Dense entmax attention with exact row solvers.
    #[value(name = "dense_oracle")]
    DenseOracle,
    /// Dense softmax attention.
    #[value(name = "dense_softmax")]
    DenseSoftmax,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Halley => "halley",
            Method::Bisection => "bisection",
            Method::Blocked => "blocked",
            Method::BlockedMasked => "blocked_masked",
            Method::DenseOracle => "dense_oracle",
            Method::DenseSoftmax => "dense_softmax",
        }
    }

    pub fn is_solver(self) -> bool {
        matches!(self, Method::Halley | Method::Bisection)
    }

    pub fn is_dense(self) -> bool {
        matches!(self, Method::DenseOracle | Method::DenseSoftmax)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub seq_lens: Vec<usize>,
    pub head_dim: usize,
    pub alpha: f64,
    /// Variances of the query entries; one row group per value.
    pub sigma2: Vec<f64>,
    pub seed: u64,
    /// Solver iterations `T` (the traced iteration count for convergence).
    pub iters: usize,
    pub block_rows: usize,
    pub block_cols: usize,
    pub causal: bool,
    pub precision: Precision,
    pub repeats: usize,
    pub warmups: usize,
    pub methods: Vec<Method>,
    /// MAE threshold for `iters_to_tol`.
    pub tol: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seq_lens: vec![1024],
            head_dim: 64,
            alpha: 1.5,
            sigma2: vec![1.0],
            seed: 0,
            iters: 3,
            block_rows: 16,
            block_cols: 16,
            causal: false,
            precision: Precision::Double,
            repeats: 5,
            warmups: 2,
            methods: vec![Method::Blocked, Method::BlockedMasked],
            tol: 1e-6,
        }
    }
}

fn bad(msg: impl Into<String>) -> BenchError {
    BenchError::Config(msg.into())
}

impl BenchConfig {
    pub fn attn_config(&self) -> AttnConfig {
        AttnConfig::default()
            .with_alpha(self.alpha)
            .with_blocks(self.block_rows, self.block_cols)
            .with_iters(self.iters)
            .with_causal(self.causal)
            .with_precision(self.precision)
    }

    fn validate_common(&self) -> Result<()> {
        if self.seq_lens.is_empty() || self.seq_lens.contains(&0) {
            return Err(bad("need at least one sequence length, all >= 1"));
        }
        if self.head_dim == 0 {
            return Err(bad("head dimension must be >= 1"));
        }
        if self.sigma2.is_empty() || self.sigma2.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(bad("sigma2 values must be finite and >= 0"));
        }
        if self.methods.is_empty() {
            return Err(bad("no methods selected"));
        }
        self.attn_config()
            .validate()
            .map_err(|e| bad(e.to_string()))
    }

    pub fn validate_convergence(&self) -> Result<()> {
        self.validate_common()?;
        if let Some(m) = self.methods.iter().find(|m| !m.is_solver()) {
            return Err(bad(format!("{m} is not a row solver; converge takes halley and bisection")));
        }
        if !(self.tol > 0.0) {
            return Err(bad("tolerance must be > 0"));
        }
        Ok(())
    }

    pub fn validate_sweep(&self) -> Result<()> {
        self.validate_common()?;
        if self.sigma2.len() < 2 {
            return Err(bad("a sweep needs at least two sigma2 values"));
        }
        if self.repeats < 3 {
            return Err(bad("timing rows need repeats >= 3"));
        }
        if let Some(m) = self.methods.iter().find(|m| m.is_solver()) {
            return Err(bad(format!("{m} is a row solver; use converge")));
        }
        let longest = self.seq_lens.iter().copied().max().unwrap_or(0);
        if longest > ORACLE_CAP && self.methods.iter().any(|m| m.is_dense()) {
            return Err(bad(format!(
                "dense methods are capped at n <= {ORACLE_CAP}, got n = {longest}"
            )));
        }
        Ok(())
    }

    pub fn validate_gate(&self) -> Result<()> {
        self.validate_common()?;
        if let Some(&n) = self.seq_lens.iter().find(|&&n| n > ORACLE_CAP) {
            return Err(bad(format!("gate checks against the dense oracle; n = {n} exceeds {ORACLE_CAP}")));
        }
        Ok(())
    }
}
