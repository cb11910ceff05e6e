//! Tiled backward pass.
//!
//! With `U = P^{2-α}` (zero off the support) the score gradient is
//! `dS = U ⊙ (dP - δ 1ᵀ)`, `dP = dO Vᵀ`, and `δ_i = dO_i · O⁽²⁾_i`. Given δ,
//! the key/value gradients and the query gradients are computed by two
//! independent passes that recompute score tiles from `Q`, `K` and the saved
//! τ, visiting only the tiles listed in the lookup tables.

use rayon::prelude::*;

use crate::entmax::EntmaxPowers;
use crate::error::{Error, Result};
use crate::forward::{AttnInputs, ForwardArtifacts};
use crate::kernel::{axpy_f64, dot_f64, valid_cols, KeyPanels, TileScratch};
use crate::matrix::{DenseMatrix, Element};
use crate::sparsity::BlockGeometry;

#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T = f64> {
    pub dq: DenseMatrix<T>,
    pub dk: DenseMatrix<T>,
    pub dv: DenseMatrix<T>,
    pub delta: Vec<f64>,
    /// Tiles visited by the two gradient passes together.
    pub visited_blocks: u64,
}

fn check_do<T: Element>(d_o: &DenseMatrix<T>, art: &ForwardArtifacts<T>) -> Result<()> {
    if d_o.shape() != art.o.shape() {
        return Err(Error::ShapeMismatch {
            what: "dO",
            expected: art.o.shape(),
            found: d_o.shape(),
        });
    }
    Ok(())
}

/// `δ_i = dO_i · O⁽²⁾_i`.
pub fn compute_delta<T: Element>(d_o: &DenseMatrix<T>, art: &ForwardArtifacts<T>) -> Result<Vec<f64>> {
    check_do(d_o, art)?;
    let o2 = art
        .o2
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("forward pass did not keep O2".into()))?;
    Ok((0..d_o.rows()).map(|r| dot_f64(d_o.row(r), o2.row(r))).collect())
}

struct Ctx<'a, T> {
    q: &'a DenseMatrix<T>,
    k: &'a DenseMatrix<T>,
    v: &'a DenseMatrix<T>,
    d_o: &'a DenseMatrix<T>,
    panels: &'a KeyPanels<T>,
    art: &'a ForwardArtifacts<T>,
    delta: &'a [f64],
    geom: BlockGeometry,
    powers: EntmaxPowers,
    mult: f64,
    scale: f64,
    d: usize,
}

impl<'a, T: Element> Ctx<'a, T> {
    fn new(
        d_o: &'a DenseMatrix<T>,
        inputs: &'a AttnInputs<T>,
        art: &'a ForwardArtifacts<T>,
        delta: &'a [f64],
        panels: &'a KeyPanels<T>,
    ) -> Result<Self> {
        check_do(d_o, art)?;
        let cfg = &art.cfg;
        cfg.validate_for::<T>()?;
        if inputs.q().shape() != art.o.shape() {
            return Err(Error::ShapeMismatch {
                what: "inputs",
                expected: art.o.shape(),
                found: inputs.q().shape(),
            });
        }
        if delta.len() != inputs.n() {
            return Err(Error::LengthMismatch {
                expected: inputs.n(),
                found: delta.len(),
            });
        }
        let geom = cfg.geometry(inputs.n())?;
        crate::forward::check_tables(&geom, &art.tau, &art.tables)?;
        let scale = cfg.resolved_scale(inputs.d());
        Ok(Self {
            q: inputs.q(),
            k: inputs.k(),
            v: inputs.v(),
            d_o,
            panels,
            art,
            delta,
            geom,
            powers: EntmaxPowers::new(cfg.alpha)?,
            mult: (cfg.alpha - 1.0) * scale,
            scale,
            d: inputs.d(),
        })
    }

    /// Calls `visit(r, c, p, ds)` for every support entry of tile `(i, j)`,
    /// with `r`, `c` local to the tile.
    #[inline]
    fn for_each_support(
        &self,
        scratch: &mut TileScratch<T>,
        i: usize,
        j: usize,
        mut visit: impl FnMut(usize, usize, f64, f64),
    ) {
        let rows = self.geom.row_range(i);
        let cols_r = self.geom.col_range(j);
        let (panel, cols) = self.panels.panel(j);
        scratch.scores(self.q.rows_slice(rows.start, rows.end), panel, self.d, cols, self.mult);
        let taus = self.art.tau.block(i);
        for r in 0..rows.len() {
            let row = rows.start + r;
            let nv = valid_cols(self.art.cfg.causal, row, cols_r.start, cols);
            let d_o = self.d_o.row(row);
            for (c, &x) in scratch.x[r * cols..r * cols + nv].iter().enumerate() {
                let t = x - taus[r];
                if t <= 0.0 {
                    continue;
                }
                let (p, u) = self.powers.prob_and_weight(t);
                let dp = dot_f64(d_o, self.v.row(cols_r.start + c));
                visit(r, c, p, u * (dp - self.delta[row]));
            }
        }
    }
}

fn dkdv_block<T: Element>(ctx: &Ctx<'_, T>, j: usize, dk_out: &mut [T], dv_out: &mut [T]) -> u64 {
    let d = ctx.d;
    let bc = ctx.geom.col_range(j).len();
    let mut dk = vec![0.0f64; bc * d];
    let mut dv = vec![0.0f64; bc * d];
    let mut scratch = TileScratch::new(&ctx.geom);
    let blocks = ctx.art.tables.query_blocks(j);
    for &i in blocks {
        let i = i as usize;
        let r0 = ctx.geom.row_range(i).start;
        ctx.for_each_support(&mut scratch, i, j, |r, c, p, ds| {
            axpy_f64(&mut dv[c * d..(c + 1) * d], p, ctx.d_o.row(r0 + r));
            axpy_f64(&mut dk[c * d..(c + 1) * d], ctx.scale * ds, ctx.q.row(r0 + r));
        });
    }
    for (o, &a) in dk_out.iter_mut().zip(&dk) {
        *o = T::narrow(a);
    }
    for (o, &a) in dv_out.iter_mut().zip(&dv) {
        *o = T::narrow(a);
    }
    blocks.len() as u64
}

fn dq_block<T: Element>(ctx: &Ctx<'_, T>, i: usize, dq_out: &mut [T]) -> u64 {
    let d = ctx.d;
    let br = ctx.geom.row_range(i).len();
    let mut dq = vec![0.0f64; br * d];
    let mut scratch = TileScratch::new(&ctx.geom);
    let blocks = ctx.art.tables.key_blocks(i);
    for &j in blocks {
        let j = j as usize;
        let c0 = ctx.geom.col_range(j).start;
        ctx.for_each_support(&mut scratch, i, j, |r, c, _, ds| {
            axpy_f64(&mut dq[r * d..(r + 1) * d], ctx.scale * ds, ctx.k.row(c0 + c));
        });
    }
    for (o, &a) in dq_out.iter_mut().zip(&dq) {
        *o = T::narrow(a);
    }
    blocks.len() as u64
}

fn dkdv_with<T: Element>(ctx: &Ctx<'_, T>) -> (DenseMatrix<T>, DenseMatrix<T>, u64) {
    let (n, d) = (ctx.geom.n, ctx.d);
    let chunk = ctx.geom.block_cols * d;
    let mut dk = DenseMatrix::zeros(n, d);
    let mut dv = DenseMatrix::zeros(n, d);
    let visited = dk
        .as_mut_slice()
        .par_chunks_mut(chunk)
        .zip(dv.as_mut_slice().par_chunks_mut(chunk))
        .enumerate()
        .map(|(j, (dkc, dvc))| dkdv_block(ctx, j, dkc, dvc))
        .sum();
    (dk, dv, visited)
}

fn dq_with<T: Element>(ctx: &Ctx<'_, T>) -> (DenseMatrix<T>, u64) {
    let (n, d) = (ctx.geom.n, ctx.d);
    let mut dq = DenseMatrix::zeros(n, d);
    let visited = dq
        .as_mut_slice()
        .par_chunks_mut(ctx.geom.block_rows * d)
        .enumerate()
        .map(|(i, c)| dq_block(ctx, i, c))
        .sum();
    (dq, visited)
}

/// Key and value gradients, one worker per key block.
pub fn backward_dkdv<T: Element>(
    d_o: &DenseMatrix<T>,
    inputs: &AttnInputs<T>,
    art: &ForwardArtifacts<T>,
    delta: &[f64],
) -> Result<(DenseMatrix<T>, DenseMatrix<T>)> {
    let panels = KeyPanels::new(inputs.k(), art.cfg.block_cols);
    let ctx = Ctx::new(d_o, inputs, art, delta, &panels)?;
    let (dk, dv, _) = dkdv_with(&ctx);
    Ok((dk, dv))
}

/// Query gradient, one worker per query block.
pub fn backward_dq<T: Element>(
    d_o: &DenseMatrix<T>,
    inputs: &AttnInputs<T>,
    art: &ForwardArtifacts<T>,
    delta: &[f64],
) -> Result<DenseMatrix<T>> {
    let panels = KeyPanels::new(inputs.k(), art.cfg.block_cols);
    let ctx = Ctx::new(d_o, inputs, art, delta, &panels)?;
    Ok(dq_with(&ctx).0)
}

/// δ, then both gradient passes.
pub fn attention_backward<T: Element>(
    d_o: &DenseMatrix<T>,
    inputs: &AttnInputs<T>,
    art: &ForwardArtifacts<T>,
) -> Result<GradBundle<T>> {
    let delta = compute_delta(d_o, art)?;
    attention_backward_with_delta(d_o, inputs, art, delta)
}

/// Like [`attention_backward`] with a caller-supplied δ.
pub fn attention_backward_with_delta<T: Element>(
    d_o: &DenseMatrix<T>,
    inputs: &AttnInputs<T>,
    art: &ForwardArtifacts<T>,
    delta: Vec<f64>,
) -> Result<GradBundle<T>> {
    let panels = KeyPanels::new(inputs.k(), art.cfg.block_cols);
    let ctx = Ctx::new(d_o, inputs, art, &delta, &panels)?;
    let (dk, dv, v1) = dkdv_with(&ctx);
    let (dq, v2) = dq_with(&ctx);
    Ok(GradBundle {
        dq,
        dk,
        dv,
        visited_blocks: v1 + v2,
        delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{attention_forward, AttnConfig};

    fn mat(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut s = seed ^ 0x9E37_79B9_7F4A_7C15;
        DenseMatrix::from_fn(n, d, |_, _| {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
    }

    fn setup(n: usize, d: usize, cfg: &AttnConfig) -> (AttnInputs, ForwardArtifacts) {
        let inp = AttnInputs::new(mat(n, d, 1), mat(n, d, 2), mat(n, d, 3)).unwrap();
        let art = attention_forward(&inp, cfg).unwrap();
        (inp, art)
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = AttnConfig::default().with_blocks(4, 4);
        let (inp, art) = setup(10, 3, &cfg);
        let g = attention_backward(&DenseMatrix::zeros(10, 3), &inp, &art).unwrap();
        assert!(g.dq.as_slice().iter().all(|&x| x == 0.0));
        assert!(g.dk.as_slice().iter().all(|&x| x == 0.0));
        assert!(g.dv.as_slice().iter().all(|&x| x == 0.0));
        assert!(g.delta.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn delta_of_o2_is_its_squared_norm() {
        let cfg = AttnConfig::default();
        let (_, art) = setup(12, 5, &cfg);
        let o2 = art.o2.clone().unwrap();
        let delta = compute_delta(&o2, &art).unwrap();
        for (r, &dl) in delta.iter().enumerate() {
            let want: f64 = o2.row(r).iter().map(|x| x * x).sum();
            assert!((dl - want).abs() < 1e-14);
        }
    }

    #[test]
    fn delta_needs_o2() {
        let mut cfg = AttnConfig::default();
        cfg.store_o2 = false;
        let (_, art) = setup(6, 2, &cfg);
        assert!(compute_delta(&DenseMatrix::zeros(6, 2), &art).is_err());
        assert!(compute_delta(&DenseMatrix::zeros(5, 2), &art).is_err());
    }

    #[test]
    fn split_passes_match_combined() {
        let cfg = AttnConfig::default().with_blocks(3, 5).with_causal(true);
        let (inp, art) = setup(17, 4, &cfg);
        let d_o = mat(17, 4, 9);
        let g = attention_backward(&d_o, &inp, &art).unwrap();
        let (dk, dv) = backward_dkdv(&d_o, &inp, &art, &g.delta).unwrap();
        let dq = backward_dq(&d_o, &inp, &art, &g.delta).unwrap();
        assert_eq!((dq, dk, dv), (g.dq, g.dk, g.dv));
        assert_eq!(g.visited_blocks, 2 * art.tables.active_blocks() as u64);
    }

    #[test]
    fn ones_upstream_dv_is_column_sum_of_p() {
        // With V = I the forward output is P itself.
        let n = 7;
        let cfg = AttnConfig::default().with_blocks(2, 3).with_alpha(2.0).with_scale(2.0);
        let inp = AttnInputs::new(mat(n, n, 4), mat(n, n, 5), DenseMatrix::identity(n)).unwrap();
        let art = attention_forward(&inp, &cfg).unwrap();
        let g = attention_backward(&DenseMatrix::from_fn(n, n, |_, _| 1.0), &inp, &art).unwrap();
        for c in 0..n {
            let col: f64 = (0..n).map(|r| art.o.get(r, c)).sum();
            for x in 0..n {
                assert!((g.dv.get(c, x) - col).abs() < 1e-12);
            }
        }
    }
}
