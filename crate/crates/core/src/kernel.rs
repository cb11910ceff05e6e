//! Tile-level building blocks shared by the forward and backward passes.
//!
//! Keys are repacked once per call into per-block transposed panels so that a
//! score tile `Q_i K_jᵀ` becomes a sequence of contiguous axpy updates.

use crate::matrix::{DenseMatrix, Element};
use crate::sparsity::BlockGeometry;

/// `K` repacked block by block: block `j` occupies `d × cols(j)` values laid
/// out as `[feature][key]`.
pub(crate) struct KeyPanels<T> {
    data: Vec<T>,
    d: usize,
    block_cols: usize,
    n: usize,
}

impl<T: Element> KeyPanels<T> {
    pub(crate) fn new(k: &DenseMatrix<T>, block_cols: usize) -> Self {
        let (n, d) = k.shape();
        let mut data = vec![T::zero(); n * d];
        let src = k.as_slice();
        let mut start = 0;
        while start < n {
            let cols = block_cols.min(n - start);
            let panel = &mut data[start * d..(start + cols) * d];
            for c in 0..cols {
                let row = &src[(start + c) * d..(start + c + 1) * d];
                for (x, &v) in row.iter().enumerate() {
                    panel[x * cols + c] = v;
                }
            }
            start += block_cols;
        }
        Self {
            data,
            d,
            block_cols,
            n,
        }
    }

    #[inline]
    pub(crate) fn panel(&self, j: usize) -> (&[T], usize) {
        let start = j * self.block_cols;
        let cols = self.block_cols.min(self.n - start);
        (&self.data[start * self.d..(start + cols) * self.d], cols)
    }
}

/// Per-worker scratch for one score tile.
pub(crate) struct TileScratch<T> {
    acc: Vec<T>,
    pub(crate) x: Vec<f64>,
}

impl<T: Element> TileScratch<T> {
    pub(crate) fn new(geom: &BlockGeometry) -> Self {
        let len = geom.block_rows * geom.block_cols;
        Self {
            acc: vec![T::zero(); len],
            x: vec![0.0; len],
        }
    }

    /// Fills `x[r * cols + c] = mult * <q_r, k_c>` for the `rows` query rows in
    /// `q` against a transposed key panel. Products are formed in `T`.
    #[inline]
    pub(crate) fn scores(&mut self, q: &[T], panel: &[T], d: usize, cols: usize, mult: f64) {
        let rows = q.len() / d;
        let acc = &mut self.acc[..rows * cols];
        for (r, out) in acc.chunks_exact_mut(cols).enumerate() {
            out.fill(T::zero());
            let qr = &q[r * d..(r + 1) * d];
            for (&a, kr) in qr.iter().zip(panel.chunks_exact(cols)) {
                for (o, &b) in out.iter_mut().zip(kr) {
                    *o = *o + a * b;
                }
            }
        }
        for (xv, &a) in self.x[..rows * cols].iter_mut().zip(acc.iter()) {
            *xv = mult * a.widen();
        }
    }
}

/// Number of keys in `cols` starting at column `c0` that row `row` may attend.
#[inline(always)]
pub(crate) fn valid_cols(causal: bool, row: usize, c0: usize, cols: usize) -> usize {
    if causal {
        (row + 1).saturating_sub(c0).min(cols)
    } else {
        cols
    }
}

/// `acc += w * src` with `src` widened to `f64`.
#[inline(always)]
pub(crate) fn axpy_f64<T: Element>(acc: &mut [f64], w: f64, src: &[T]) {
    for (a, &s) in acc.iter_mut().zip(src) {
        *a += w * s.widen();
    }
}

#[inline(always)]
pub(crate) fn dot_f64<T: Element>(a: &[T], b: &[T]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            lanes[l] += x[l].widen() * y[l].widen();
        }
    }
    let mut s = (lanes[0] + lanes[2]) + (lanes[1] + lanes[3]);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        s += x.widen() * y.widen();
    }
    s
}
