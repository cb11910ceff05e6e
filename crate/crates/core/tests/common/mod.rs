#![allow(dead_code)]

use entmax_attention::{AttnInputs, DenseMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
}

/// Q ~ N(0, σ²), K, V ~ N(0, 1).
pub fn gaussian_inputs(n: usize, d: usize, sigma: f64, seed: u64) -> AttnInputs {
    let mut r = rng(seed);
    let q = gaussian(&mut r, n, d, sigma);
    let k = gaussian(&mut r, n, d, 1.0);
    let v = gaussian(&mut r, n, d, 1.0);
    AttnInputs::new(q, k, v).unwrap()
}
