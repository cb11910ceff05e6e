//! Tiled α-entmax attention forward pass.
//!
//! The pass runs in two stages over `B_r × B_c` score tiles that are
//! recomputed from `Q` and `K` every time they are needed:
//!
//! 1. [`compute_tau_blocked`] runs the Halley-bisection solver for every query
//!    row at once per row block, accumulating `f`, `f'` and `f''` tile by
//!    tile, and records which tiles contain a positive weight.
//! 2. [`forward_blocked`] visits the tiles listed in the lookup tables and
//!    accumulates `O = P V` and `O⁽²⁾ = (U V) / ‖U‖₁` with `U = P^{2-α}`.
//!
//! No buffer scales with `n²`: per worker there is one tile of scores plus
//! row-block accumulators, and per call one transposed copy of `K`.

use rayon::prelude::*;

use crate::entmax::{uniform_tau, EntmaxPowers, RootSums, RootState, DEFAULT_HALLEY_ITERS};
use crate::error::{Error, Result};
use crate::kernel::{axpy_f64, valid_cols, KeyPanels, TileScratch};
use crate::matrix::{DenseMatrix, Element, Precision};
use crate::sparsity::{build_tables, set_word_bit, BlockGeometry, BlockMask, LookupTables};

/// Query, key and value matrices of one attention head, each `n × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnInputs<T = f64> {
    q: DenseMatrix<T>,
    k: DenseMatrix<T>,
    v: DenseMatrix<T>,
}

impl<T: Element> AttnInputs<T> {
    pub fn new(q: DenseMatrix<T>, k: DenseMatrix<T>, v: DenseMatrix<T>) -> Result<Self> {
        let shape = q.shape();
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::EmptyInput);
        }
        for (what, m) in [("K", &k), ("V", &v)] {
            if m.shape() != shape {
                return Err(Error::ShapeMismatch {
                    what,
                    expected: shape,
                    found: m.shape(),
                });
            }
        }
        for m in [&q, &k, &v] {
            if let Some(i) = m.as_slice().iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(i));
            }
        }
        Ok(Self { q, k, v })
    }

    #[inline]
    pub fn q(&self) -> &DenseMatrix<T> {
        &self.q
    }

    #[inline]
    pub fn k(&self) -> &DenseMatrix<T> {
        &self.k
    }

    #[inline]
    pub fn v(&self) -> &DenseMatrix<T> {
        &self.v
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.q.rows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.q.cols()
    }

    pub fn cast<U: Element>(&self) -> AttnInputs<U> {
        AttnInputs {
            q: self.q.cast(),
            k: self.k.cast(),
            v: self.v.cast(),
        }
    }

    pub fn into_parts(self) -> (DenseMatrix<T>, DenseMatrix<T>, DenseMatrix<T>) {
        (self.q, self.k, self.v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttnConfig {
    pub alpha: f64,
    pub block_rows: usize,
    pub block_cols: usize,
    /// Halley-bisection iterations `T`.
    pub iters: usize,
    /// Number of τ iterations that visit every block before the provisional
    /// mask takes over; `None` means zero. The provisional mask keeps blocks
    /// whose entries can still exceed the bracket's lower end, and the final
    /// mask keeps blocks with an entry above the final τ.
    pub mask_build_iter: Option<usize>,
    pub causal: bool,
    /// Score scale; `None` means `1/√d`.
    pub scale: Option<f64>,
    pub precision: Precision,
    /// Skip tiles whose attention weights are all zero. When off, every tile
    /// allowed by the causal structure is visited.
    pub skip_null_blocks: bool,
    /// Keep `O⁽²⁾` for the backward pass; inference can turn this off.
    pub store_o2: bool,
}

impl Default for AttnConfig {
    fn default() -> Self {
        Self {
            alpha: 1.5,
            block_rows: 32,
            block_cols: 32,
            iters: DEFAULT_HALLEY_ITERS,
            mask_build_iter: None,
            causal: false,
            scale: None,
            precision: Precision::Double,
            skip_null_blocks: true,
            store_o2: true,
        }
    }
}

impl AttnConfig {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_blocks(mut self, block_rows: usize, block_cols: usize) -> Self {
        self.block_rows = block_rows;
        self.block_cols = block_cols;
        self
    }

    pub fn with_iters(mut self, iters: usize) -> Self {
        self.iters = iters;
        self
    }

    pub fn with_causal(mut self, causal: bool) -> Self {
        self.causal = causal;
        self
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = Some(scale);
        self
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn with_skipping(mut self, skip: bool) -> Self {
        self.skip_null_blocks = skip;
        self
    }

    pub fn with_mask_build_iter(mut self, iter: Option<usize>) -> Self {
        self.mask_build_iter = iter;
        self
    }

    /// Full-scan τ iterations before pruning starts.
    pub fn mask_iter(&self) -> usize {
        self.mask_build_iter.unwrap_or(0)
    }

    pub fn resolved_scale(&self, d: usize) -> f64 {
        self.scale.unwrap_or_else(|| 1.0 / (d as f64).sqrt())
    }

    pub fn geometry(&self, n: usize) -> Result<BlockGeometry> {
        BlockGeometry::new(n, self.block_rows, self.block_cols)
    }

    pub fn validate(&self) -> Result<()> {
        crate::entmax::EntmaxPowers::new(self.alpha)?;
        if self.block_rows == 0 || self.block_cols == 0 {
            return Err(Error::InvalidConfig("block sizes must be >= 1".into()));
        }
        if self.iters == 0 {
            return Err(Error::InvalidConfig("iters must be >= 1".into()));
        }
        let m = self.mask_iter();
        if m > self.iters {
            return Err(Error::InvalidConfig(format!(
                "mask_build_iter {m} outside 0..={}",
                self.iters
            )));
        }
        if let Some(s) = self.scale {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::InvalidConfig(format!("scale must be > 0, got {s}")));
            }
        }
        Ok(())
    }

    pub(crate) fn validate_for<T: Element>(&self) -> Result<()> {
        self.validate()?;
        if self.precision != T::PRECISION {
            return Err(Error::InvalidConfig(format!(
                "config precision {:?} does not match {:?} inputs",
                self.precision,
                T::PRECISION
            )));
        }
        Ok(())
    }
}

/// Scaled thresholds, one per query row, sliced by row block.
#[derive(Debug, Clone, PartialEq)]
pub struct TauVector {
    values: Vec<f64>,
    block_rows: usize,
}

impl TauVector {
    pub fn new(values: Vec<f64>, block_rows: usize) -> Self {
        Self { values, block_rows }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, i: usize) -> &[f64] {
        let start = i * self.block_rows;
        &self.values[start..(start + self.block_rows).min(self.values.len())]
    }
}

/// Work counters collected by the kernels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct KernelStats {
    /// Score tiles evaluated while solving for τ, including the max pass.
    pub tau_tiles: u64,
    /// `(K_j, V_j)` tiles loaded by the output loop.
    pub visited_blocks: u64,
    /// Entries of `P` that are strictly positive.
    pub nonzeros: u64,
}

impl std::ops::Add for KernelStats {
    type Output = KernelStats;

    fn add(self, o: KernelStats) -> KernelStats {
        KernelStats {
            tau_tiles: self.tau_tiles + o.tau_tiles,
            visited_blocks: self.visited_blocks + o.visited_blocks,
            nonzeros: self.nonzeros + o.nonzeros,
        }
    }
}

/// Everything the backward pass needs from the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardArtifacts<T = f64> {
    pub o: DenseMatrix<T>,
    /// `(Σ_j U_ij V_j) / ‖U_i‖₁`; absent when the config disables it.
    pub o2: Option<DenseMatrix<T>>,
    pub tau: TauVector,
    pub mask: BlockMask,
    pub tables: LookupTables,
    pub cfg: AttnConfig,
    pub stats: KernelStats,
}

impl<T: Element> ForwardArtifacts<T> {
    /// Bytes held beyond the output `O`: `O⁽²⁾`, τ, mask bits and tables.
    pub fn aux_bytes(&self) -> usize {
        self.o2.as_ref().map_or(0, DenseMatrix::size_bytes)
            + self.tau.len() * std::mem::size_of::<f64>()
            + self.mask.storage_bytes()
            + self.tables.storage_bytes()
    }

    /// Number of query/key pairs allowed by the causal structure.
    pub fn valid_entries(&self) -> u64 {
        let n = self.o.rows() as u64;
        if self.cfg.causal {
            n * (n + 1) / 2
        } else {
            n * n
        }
    }

    /// Fraction of zero entries in `P`.
    pub fn attn_sparsity(&self) -> f64 {
        1.0 - self.stats.nonzeros as f64 / self.valid_entries() as f64
    }

    pub fn into_mask(self) -> BlockMask {
        self.mask
    }
}

/// Read-only state shared by all row-block workers.
struct Ctx<'a, T> {
    q: &'a DenseMatrix<T>,
    v: &'a DenseMatrix<T>,
    panels: &'a KeyPanels<T>,
    geom: BlockGeometry,
    powers: EntmaxPowers,
    /// `(α - 1) · scale`: turns a raw dot product into a pre-scaled logit.
    mult: f64,
    causal: bool,
    d: usize,
}

impl<'a, T: Element> Ctx<'a, T> {
    fn new(inputs: &'a AttnInputs<T>, panels: &'a KeyPanels<T>, cfg: &AttnConfig) -> Result<Self> {
        let d = inputs.d();
        Ok(Self {
            q: inputs.q(),
            v: inputs.v(),
            panels,
            geom: cfg.geometry(inputs.n())?,
            powers: EntmaxPowers::new(cfg.alpha)?,
            mult: (cfg.alpha - 1.0) * cfg.resolved_scale(d),
            causal: cfg.causal,
            d,
        })
    }

    /// Key blocks row block `i` can see at all.
    fn structural_blocks(&self, i: usize) -> Vec<u32> {
        (0..self.geom.t_c())
            .filter(|&j| !(self.causal && self.geom.above_diagonal(i, j)))
            .map(|j| j as u32)
            .collect()
    }

    #[inline]
    fn tile(&self, scratch: &mut TileScratch<T>, i: usize, j: usize) -> usize {
        let rows = self.geom.row_range(i);
        let (panel, cols) = self.panels.panel(j);
        scratch.scores(self.q.rows_slice(rows.start, rows.end), panel, self.d, cols, self.mult);
        cols
    }
}

/// Solves τ for every row in the block with the Halley-bisection hybrid,
/// evaluating `f`, `f'`, `f''` tile by tile, and writes the block's mask row.
fn solve_row_block<T: Element>(
    ctx: &Ctx<'_, T>,
    cfg: &AttnConfig,
    i: usize,
    mask_row: &mut [u64],
) -> (Vec<f64>, u64) {
    let rows = ctx.geom.row_range(i);
    let br = rows.len();
    let mut scratch = TileScratch::new(&ctx.geom);
    let mut visit = ctx.structural_blocks(i);
    let mut tiles = 0u64;

    // Bracket initialisation needs the row maxima (and minima, to spot rows
    // whose logits are all equal and therefore uniform). The per-row maximum
    // of every key block decides which blocks can still hold support.
    let t_c = ctx.geom.t_c();
    let mut block_max = vec![f64::NEG_INFINITY; br * t_c];
    let mut max = vec![f64::NEG_INFINITY; br];
    let mut min = vec![f64::INFINITY; br];
    for &j in &visit {
        let j = j as usize;
        let cols = ctx.tile(&mut scratch, i, j);
        tiles += 1;
        let c0 = ctx.geom.col_range(j).start;
        for r in 0..br {
            let nv = valid_cols(ctx.causal, rows.start + r, c0, cols);
            let mut bm = f64::NEG_INFINITY;
            for &x in &scratch.x[r * cols..r * cols + nv] {
                bm = bm.max(x);
                min[r] = min[r].min(x);
            }
            block_max[r * t_c + j] = bm;
            max[r] = max[r].max(bm);
        }
    }

    let n = ctx.geom.n;
    let mut states: Vec<RootState> = Vec::with_capacity(br);
    let mut tau = vec![0.0; br];
    let mut settled = vec![false; br];
    for r in 0..br {
        let n_valid = if ctx.causal { (rows.start + r + 1).min(n) } else { n };
        let st = RootState::initial(max[r], n_valid, cfg.alpha);
        if max[r] == min[r] {
            settled[r] = true;
            tau[r] = uniform_tau(max[r], n_valid, cfg.alpha);
        } else {
            tau[r] = st.tau;
        }
        states.push(st);
    }

    // Keeps the blocks where some row's maximum clears its floor.
    let prune = |visit: &mut Vec<u32>, floor: &[f64]| {
        visit.retain(|&j| (0..br).any(|r| block_max[r * t_c + j as usize] > floor[r]));
    };
    let build_at = cfg.mask_iter();
    let mut floor = vec![0.0; br];
    let mut sums = vec![RootSums::default(); br];

    for it in 1..=cfg.iters {
        if cfg.skip_null_blocks && it > build_at {
            // Every iterate stays inside the bracket, so entries at or below
            // its lower end add nothing to f, f', f''.
            for r in 0..br {
                floor[r] = if settled[r] { tau[r] } else { states[r].tau_lo };
            }
            prune(&mut visit, &floor);
        }
        sums.iter_mut().for_each(|s| *s = RootSums::default());
        for &j in &visit {
            let j = j as usize;
            let cols = ctx.tile(&mut scratch, i, j);
            tiles += 1;
            let c0 = ctx.geom.col_range(j).start;
            for r in 0..br {
                if settled[r] {
                    continue;
                }
                let nv = valid_cols(ctx.causal, rows.start + r, c0, cols);
                let tr = tau[r];
                let acc = &mut sums[r];
                for &x in &scratch.x[r * cols..r * cols + nv] {
                    let t = x - tr;
                    if t > 0.0 {
                        ctx.powers.accumulate(t, acc);
                    }
                }
            }
        }
        for r in 0..br {
            if settled[r] {
                continue;
            }
            let (f, f1, f2) = ctx.powers.finish(&sums[r]);
            states[r].observe(f, f1, f2);
            states[r].advance_hybrid();
            tau[r] = states[r].tau;
        }
    }
    if cfg.skip_null_blocks {
        prune(&mut visit, &tau);
    }

    for w in mask_row.iter_mut() {
        *w = 0;
    }
    for &j in &visit {
        set_word_bit(mask_row, j as usize, true);
    }
    (tau, tiles)
}

fn check_inputs<T: Element>(inputs: &AttnInputs<T>, cfg: &AttnConfig) -> Result<BlockGeometry> {
    cfg.validate_for::<T>()?;
    cfg.geometry(inputs.n())
}

fn tau_with_panels<T: Element>(
    inputs: &AttnInputs<T>,
    cfg: &AttnConfig,
    panels: &KeyPanels<T>,
    mask: &mut BlockMask,
) -> Result<(TauVector, u64)> {
    let ctx = Ctx::new(inputs, panels, cfg)?;
    mask.reset(ctx.geom.t_r(), ctx.geom.t_c());
    let wpr = mask.words_per_row();
    let blocks: Vec<(Vec<f64>, u64)> = mask
        .words_mut()
        .par_chunks_mut(wpr)
        .enumerate()
        .map(|(i, row)| solve_row_block(&ctx, cfg, i, row))
        .collect();
    let mut values = Vec::with_capacity(inputs.n());
    let mut tiles = 0;
    for (taus, t) in blocks {
        values.extend_from_slice(&taus);
        tiles += t;
    }
    Ok((TauVector::new(values, cfg.block_rows), tiles))
}

/// Row thresholds for `S = scale · Q Kᵀ` and the block mask, without
/// materialising `S`.
pub fn compute_tau_blocked<T: Element>(
    inputs: &AttnInputs<T>,
    cfg: &AttnConfig,
) -> Result<(TauVector, BlockMask)> {
    let geom = check_inputs(inputs, cfg)?;
    let mut mask = BlockMask::for_geometry(&geom);
    let tau = compute_tau_blocked_into(inputs, cfg, &mut mask)?;
    Ok((tau, mask))
}

/// Like [`compute_tau_blocked`], writing the mask into a caller-owned
/// buffer that is resized as needed.
pub fn compute_tau_blocked_into<T: Element>(
    inputs: &AttnInputs<T>,
    cfg: &AttnConfig,
    mask: &mut BlockMask,
) -> Result<TauVector> {
    check_inputs(inputs, cfg)?;
    let panels = KeyPanels::new(inputs.k(), cfg.block_cols);
    Ok(tau_with_panels(inputs, cfg, &panels, mask)?.0)
}

fn forward_row_block<T: Element>(
    ctx: &Ctx<'_, T>,
    tau: &TauVector,
    tables: &LookupTables,
    i: usize,
    o_out: &mut [T],
    o2_out: Option<&mut [T]>,
) -> KernelStats {
    let rows = ctx.geom.row_range(i);
    let br = rows.len();
    let d = ctx.d;
    let mut scratch = TileScratch::new(&ctx.geom);
    let mut o_acc = vec![0.0f64; br * d];
    let want_o2 = o2_out.is_some();
    let mut o2_acc = if want_o2 { vec![0.0f64; br * d] } else { Vec::new() };
    let mut u_sum = vec![0.0f64; br];
    let taus = tau.block(i);
    let mut stats = KernelStats::default();

    for &j in tables.key_blocks(i) {
        let j = j as usize;
        let cols = ctx.tile(&mut scratch, i, j);
        stats.visited_blocks += 1;
        let c0 = ctx.geom.col_range(j).start;
        for r in 0..br {
            let nv = valid_cols(ctx.causal, rows.start + r, c0, cols);
            let tr = taus[r];
            let o_row = &mut o_acc[r * d..(r + 1) * d];
            for (c, &x) in scratch.x[r * cols..r * cols + nv].iter().enumerate() {
                let t = x - tr;
                if t <= 0.0 {
                    continue;
                }
                stats.nonzeros += 1;
                let v_row = ctx.v.row(c0 + c);
                if want_o2 {
                    let (p, u) = ctx.powers.prob_and_weight(t);
                    axpy_f64(o_row, p, v_row);
                    axpy_f64(&mut o2_acc[r * d..(r + 1) * d], u, v_row);
                    u_sum[r] += u;
                } else {
                    axpy_f64(o_row, ctx.powers.prob(t), v_row);
                }
            }
        }
    }

    for (o, &a) in o_out.iter_mut().zip(&o_acc) {
        *o = T::narrow(a);
    }
    if let Some(o2_out) = o2_out {
        for r in 0..br {
            let inv = if u_sum[r] > 0.0 { 1.0 / u_sum[r] } else { 0.0 };
            for (o, &a) in o2_out[r * d..(r + 1) * d].iter_mut().zip(&o2_acc[r * d..(r + 1) * d]) {
                *o = T::narrow(a * inv);
            }
        }
    }
    stats
}

pub(crate) fn check_tables(geom: &BlockGeometry, tau: &TauVector, tables: &LookupTables) -> Result<()> {
    if tables.t_r() != geom.t_r() || tables.t_c() != geom.t_c() {
        return Err(Error::StaleTables(format!(
            "tables are {}x{}, config needs {}x{}",
            tables.t_r(),
            tables.t_c(),
            geom.t_r(),
            geom.t_c()
        )));
    }
    if tau.len() != geom.n {
        return Err(Error::StaleTables(format!(
            "tau has {} rows, inputs have {}",
            tau.len(),
            geom.n
        )));
    }
    Ok(())
}

fn forward_with_panels<T: Element>(
    inputs: &AttnInputs<T>,
    tau: TauVector,
    tables: LookupTables,
    mask: BlockMask,
    cfg: &AttnConfig,
    panels: &KeyPanels<T>,
) -> Result<ForwardArtifacts<T>> {
    let ctx = Ctx::new(inputs, panels, cfg)?;
    check_tables(&ctx.geom, &tau, &tables)?;
    let (n, d) = (inputs.n(), inputs.d());
    let chunk = cfg.block_rows * d;
    let mut o = DenseMatrix::<T>::zeros(n, d);
    let mut o2 = cfg.store_o2.then(|| DenseMatrix::<T>::zeros(n, d));
    let stats = match o2.as_mut() {
        Some(o2m) => o
            .as_mut_slice()
            .par_chunks_mut(chunk)
            .zip(o2m.as_mut_slice().par_chunks_mut(chunk))
            .enumerate()
            .map(|(i, (oc, o2c))| forward_row_block(&ctx, &tau, &tables, i, oc, Some(o2c)))
            .reduce(KernelStats::default, |a, b| a + b),
        None => o
            .as_mut_slice()
            .par_chunks_mut(chunk)
            .enumerate()
            .map(|(i, oc)| forward_row_block(&ctx, &tau, &tables, i, oc, None))
            .reduce(KernelStats::default, |a, b| a + b),
    };
    Ok(ForwardArtifacts {
        o,
        o2,
        tau,
        mask,
        tables,
        cfg: cfg.clone(),
        stats,
    })
}

/// Output pass given thresholds and lookup tables; only the key blocks listed
/// for each query block are loaded.
pub fn forward_blocked<T: Element>(
    inputs: &AttnInputs<T>,
    tau: TauVector,
    tables: LookupTables,
    cfg: &AttnConfig,
) -> Result<ForwardArtifacts<T>> {
    check_inputs(inputs, cfg)?;
    let panels = KeyPanels::new(inputs.k(), cfg.block_cols);
    let mask = tables.to_mask();
    forward_with_panels(inputs, tau, tables, mask, cfg, &panels)
}

/// Thresholds, mask, tables and outputs in one call.
pub fn attention_forward<T: Element>(
    inputs: &AttnInputs<T>,
    cfg: &AttnConfig,
) -> Result<ForwardArtifacts<T>> {
    let geom = check_inputs(inputs, cfg)?;
    attention_forward_with_mask(inputs, cfg, BlockMask::for_geometry(&geom))
}

/// [`attention_forward`] reusing a mask buffer from an earlier call (for
/// example another layer). The buffer comes back inside the artifacts.
pub fn attention_forward_with_mask<T: Element>(
    inputs: &AttnInputs<T>,
    cfg: &AttnConfig,
    mut mask: BlockMask,
) -> Result<ForwardArtifacts<T>> {
    check_inputs(inputs, cfg)?;
    let panels = KeyPanels::new(inputs.k(), cfg.block_cols);
    let (tau, tau_tiles) = tau_with_panels(inputs, cfg, &panels, &mut mask)?;
    let tables = build_tables(&mask);
    let mut art = forward_with_panels(inputs, tau, tables, mask, cfg, &panels)?;
    art.stats.tau_tiles = tau_tiles;
    Ok(art)
}

/// Runs [`attention_forward`] head by head.
pub fn attention_forward_heads<T: Element>(
    heads: &[AttnInputs<T>],
    cfg: &AttnConfig,
) -> Result<Vec<ForwardArtifacts<T>>> {
    heads.iter().map(|h| attention_forward(h, cfg)).collect()
}

/// Bytes of the transposed key copy a call keeps alive while it runs.
pub fn key_panel_bytes<T: Element>(inputs: &AttnInputs<T>) -> usize {
    inputs.n() * inputs.d() * std::mem::size_of::<T>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entmax::{entmax_halley, LogitVector};

    fn lcg_matrix(n: usize, d: usize, seed: u64) -> DenseMatrix {
        let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        DenseMatrix::from_fn(n, d, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        })
    }

    fn inputs(n: usize, d: usize, seed: u64) -> AttnInputs {
        AttnInputs::new(
            lcg_matrix(n, d, seed),
            lcg_matrix(n, d, seed + 1),
            lcg_matrix(n, d, seed + 2),
        )
        .unwrap()
    }

    fn row_scores(inp: &AttnInputs, row: usize, scale: f64, causal: bool) -> Vec<f64> {
        let len = if causal { row + 1 } else { inp.n() };
        (0..len)
            .map(|c| scale * (0..inp.d()).map(|x| inp.q().get(row, x) * inp.k().get(c, x)).sum::<f64>())
            .collect()
    }

    #[test]
    fn single_block_matches_row_solver() {
        let inp = inputs(24, 6, 3);
        let cfg = AttnConfig::default().with_blocks(24, 24);
        let (tau, mask) = compute_tau_blocked(&inp, &cfg).unwrap();
        assert_eq!(mask.count_ones(), 1);
        let scale = cfg.resolved_scale(6);
        for row in 0..24 {
            let s = LogitVector::new(row_scores(&inp, row, scale, false), 1.5).unwrap();
            let (_, t) = entmax_halley(&s, cfg.iters).unwrap();
            assert!((t - tau.values()[row]).abs() < 1e-12, "row {row}");
        }
    }

    #[test]
    fn uneven_blocks_match_row_solver_causal() {
        let inp = inputs(37, 5, 9);
        let cfg = AttnConfig::default().with_blocks(8, 5).with_causal(true).with_alpha(1.8);
        let (tau, _) = compute_tau_blocked(&inp, &cfg).unwrap();
        let scale = cfg.resolved_scale(5);
        for row in 0..37 {
            let s = LogitVector::new(row_scores(&inp, row, scale, true), 1.8).unwrap();
            let (_, t) = entmax_halley(&s, cfg.iters).unwrap();
            assert!((t - tau.values()[row]).abs() < 1e-10, "row {row}");
        }
    }

    #[test]
    fn identity_values_reproduce_probabilities() {
        let n = 9;
        let base = inputs(n, n, 21);
        let (q, k, _) = base.into_parts();
        let inp = AttnInputs::new(q, k, DenseMatrix::identity(n)).unwrap();
        let cfg = AttnConfig::default().with_blocks(4, 4);
        let art = attention_forward(&inp, &cfg).unwrap();
        let scale = cfg.resolved_scale(n);
        for row in 0..n {
            let s = LogitVector::new(row_scores(&inp, row, scale, false), 1.5).unwrap();
            let (p, _) = entmax_halley(&s, cfg.iters).unwrap();
            for c in 0..n {
                assert!((art.o.get(row, c) - p.values()[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_token_returns_value() {
        let inp = inputs(1, 4, 5);
        let art = attention_forward(&inp, &AttnConfig::default()).unwrap();
        assert_eq!(art.o, *inp.v());
        assert_eq!(art.o2.as_ref().unwrap(), inp.v());
    }

    #[test]
    fn causal_first_row_attends_to_itself() {
        let inp = inputs(2, 3, 8);
        let cfg = AttnConfig::default().with_causal(true).with_blocks(1, 1);
        let art = attention_forward(&inp, &cfg).unwrap();
        assert_eq!(art.o.row(0), inp.v().row(0));
        assert!(!art.mask.get(0, 1));
    }

    #[test]
    fn visited_blocks_equal_table_size() {
        let inp = inputs(64, 8, 2);
        let cfg = AttnConfig::default().with_blocks(8, 8).with_alpha(2.0).with_scale(3.0);
        let art = attention_forward(&inp, &cfg).unwrap();
        assert_eq!(art.stats.visited_blocks as usize, art.tables.active_blocks());
        assert_eq!(art.stats.visited_blocks as usize, art.mask.count_ones());
        assert!(art.mask.count_ones() < 64, "expected some null blocks");
    }

    #[test]
    fn inference_mode_skips_o2() {
        let inp = inputs(10, 4, 1);
        let mut cfg = AttnConfig::default();
        cfg.store_o2 = false;
        let a = attention_forward(&inp, &cfg).unwrap();
        assert!(a.o2.is_none());
        let b = attention_forward(&inp, &AttnConfig::default()).unwrap();
        assert_eq!(a.o, b.o);
    }

    #[test]
    fn rejects_bad_config_and_shapes() {
        let inp = inputs(4, 2, 0);
        assert!(attention_forward(&inp, &AttnConfig::default().with_alpha(1.0)).is_err());
        assert!(attention_forward(&inp, &AttnConfig::default().with_blocks(0, 4)).is_err());
        assert!(attention_forward(&inp, &AttnConfig::default().with_iters(0)).is_err());
        assert!(attention_forward(&inp, &AttnConfig::default().with_mask_build_iter(Some(4))).is_err());
        assert!(attention_forward(&inp, &AttnConfig::default().with_precision(Precision::Single)).is_err());
        let (q, k, _) = inp.into_parts();
        assert!(AttnInputs::new(q, k, DenseMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn stale_tables_rejected() {
        let inp = inputs(16, 4, 4);
        let cfg = AttnConfig::default().with_blocks(4, 4);
        let (tau, mask) = compute_tau_blocked(&inp, &cfg).unwrap();
        let tables = build_tables(&mask);
        let other = AttnConfig::default().with_blocks(8, 8);
        assert!(matches!(
            forward_blocked(&inp, tau.clone(), tables.clone(), &other),
            Err(Error::StaleTables(_))
        ));
        let short = TauVector::new(tau.values()[..8].to_vec(), 4);
        assert!(forward_blocked(&inp, short, tables, &cfg).is_err());
    }

    #[test]
    fn mask_buffer_is_reused() {
        let inp = inputs(16, 4, 4);
        let cfg = AttnConfig::default().with_blocks(4, 4);
        let buf = BlockMask::full(10, 10);
        let art = attention_forward_with_mask(&inp, &cfg, buf).unwrap();
        assert_eq!((art.mask.t_r(), art.mask.t_c()), (4, 4));
    }
}
