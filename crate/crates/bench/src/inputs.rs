use entmax_attention::{AttnInputs, DenseMatrix};

use crate::error::{BenchError, Result};
use crate::rng::{GaussianStream, Stream};

/// `n × cols` standard normals from one stream, scaled by `std`.
pub fn gaussian_matrix(rows: usize, cols: usize, std: f64, seed: u64, stream: Stream) -> DenseMatrix {
    let mut data = vec![0.0; rows * cols];
    GaussianStream::new(seed, stream).fill(&mut data);
    if std != 1.0 {
        data.iter_mut().for_each(|x| *x *= std);
    }
    DenseMatrix::from_vec(rows, cols, data).expect("length matches shape")
}

/// `Q ~ N(0, σ²)`, `K, V ~ N(0, 1)`, each `n × d`.
pub fn gen_inputs(n: usize, d: usize, sigma2: f64, seed: u64) -> Result<AttnInputs> {
    if n == 0 || d == 0 {
        return Err(BenchError::Config(format!("n and d must be >= 1, got {n}x{d}")));
    }
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(BenchError::Config(format!("sigma2 must be >= 0, got {sigma2}")));
    }
    Ok(AttnInputs::new(
        gaussian_matrix(n, d, sigma2.sqrt(), seed, Stream::Query),
        gaussian_matrix(n, d, 1.0, seed, Stream::Key),
        gaussian_matrix(n, d, 1.0, seed, Stream::Value),
    )?)
}

/// Gaussian logits `s ~ N(0, σ²)` of length `n`.
pub fn gen_logits(n: usize, sigma2: f64, seed: u64) -> Vec<f64> {
    gaussian_matrix(1, n, sigma2.sqrt(), seed, Stream::Query).into_vec()
}
