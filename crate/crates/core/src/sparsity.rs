//! Block occupancy mask and the two lookup tables derived from it.
//!
//! `M[i][j] = 1` when query block `i` has at least one positive attention
//! weight against key block `j`. The per-query-block table lists, for each
//! `i`, the key blocks `{j : M[i][j] = 1}`; the per-key-block table lists,
//! for each `j`, the query blocks `{i : M[i][j] = 1}`. Both are stored
//! CSR-style: one flat index array plus offsets.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Sequence length and tile sizes that fix the block grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BlockGeometry {
    pub n: usize,
    pub block_rows: usize,
    pub block_cols: usize,
}

impl BlockGeometry {
    pub fn new(n: usize, block_rows: usize, block_cols: usize) -> Result<Self> {
        if block_rows == 0 || block_cols == 0 {
            return Err(Error::InvalidConfig("block sizes must be >= 1".into()));
        }
        Ok(Self {
            n,
            block_rows,
            block_cols,
        })
    }

    /// `⌈n / B_r⌉`.
    #[inline]
    pub fn t_r(&self) -> usize {
        self.n.div_ceil(self.block_rows)
    }

    /// `⌈n / B_c⌉`.
    #[inline]
    pub fn t_c(&self) -> usize {
        self.n.div_ceil(self.block_cols)
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        let start = i * self.block_rows;
        start..(start + self.block_rows).min(self.n)
    }

    #[inline]
    pub fn col_range(&self, j: usize) -> std::ops::Range<usize> {
        let start = j * self.block_cols;
        start..(start + self.block_cols).min(self.n)
    }

    /// True when every key in block `j` comes after every query in block `i`,
    /// i.e. the whole tile is removed by a causal mask.
    #[inline]
    pub fn above_diagonal(&self, i: usize, j: usize) -> bool {
        let last_row = self.row_range(i).end - 1;
        j * self.block_cols > last_row
    }
}

const WORD: usize = 64;

/// `T_r × T_c` bit matrix, one bit per block, rows padded to whole words.
#[derive(Clone, PartialEq, Eq)]
pub struct BlockMask {
    t_r: usize,
    t_c: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl BlockMask {
    pub fn new(t_r: usize, t_c: usize) -> Self {
        let words_per_row = t_c.div_ceil(WORD);
        Self {
            t_r,
            t_c,
            words_per_row,
            bits: vec![0; t_r * words_per_row],
        }
    }

    pub fn for_geometry(geom: &BlockGeometry) -> Self {
        Self::new(geom.t_r(), geom.t_c())
    }

    pub fn full(t_r: usize, t_c: usize) -> Self {
        let mut m = Self::new(t_r, t_c);
        for i in 0..t_r {
            for j in 0..t_c {
                m.set(i, j, true);
            }
        }
        m
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let t_c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t_c) {
            return Err(Error::InvalidConfig("ragged mask rows".into()));
        }
        let mut m = Self::new(rows.len(), t_c);
        for (i, r) in rows.iter().enumerate() {
            for (j, &b) in r.iter().enumerate() {
                m.set(i, j, b);
            }
        }
        Ok(m)
    }

    /// Reshapes in place, keeping the allocation when it is large enough, and
    /// clears every bit. This lets one buffer sized for the largest grid be
    /// reused across calls.
    pub fn reset(&mut self, t_r: usize, t_c: usize) {
        self.t_r = t_r;
        self.t_c = t_c;
        self.words_per_row = t_c.div_ceil(WORD);
        self.bits.clear();
        self.bits.resize(t_r * self.words_per_row, 0);
    }

    #[inline]
    pub fn t_r(&self) -> usize {
        self.t_r
    }

    #[inline]
    pub fn t_c(&self) -> usize {
        self.t_c
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        debug_assert!(i < self.t_r && j < self.t_c);
        (self.bits[i * self.words_per_row + j / WORD] >> (j % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, on: bool) {
        debug_assert!(i < self.t_r && j < self.t_c);
        let w = &mut self.bits[i * self.words_per_row + j / WORD];
        let bit = 1u64 << (j % WORD);
        if on {
            *w |= bit;
        } else {
            *w &= !bit;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn storage_bytes(&self) -> usize {
        self.bits.len() * std::mem::size_of::<u64>()
    }

    pub(crate) fn words_per_row(&self) -> usize {
        self.words_per_row
    }

    /// Word storage, `words_per_row` words per block row; disjoint block rows
    /// can be filled concurrently through `chunks_mut`.
    pub(crate) fn words_mut(&mut self) -> &mut [u64] {
        &mut self.bits
    }

    pub fn to_rows(&self) -> Vec<Vec<bool>> {
        (0..self.t_r)
            .map(|i| (0..self.t_c).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

#[inline]
pub(crate) fn set_word_bit(row_words: &mut [u64], j: usize, on: bool) {
    let bit = 1u64 << (j % WORD);
    if on {
        row_words[j / WORD] |= bit;
    } else {
        row_words[j / WORD] &= !bit;
    }
}

/// Text grid of `0`/`1`, one block row per line.
impl fmt::Display for BlockMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.t_r {
            for j in 0..self.t_c {
                f.write_str(if self.get(i, j) { "1" } else { "0" })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl fmt::Debug for BlockMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BlockMask {}x{}", self.t_r, self.t_c)?;
        fmt::Display::fmt(self, f)
    }
}

impl FromStr for BlockMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let rows = s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.chars()
                    .map(|c| match c {
                        '0' => Ok(false),
                        '1' => Ok(true),
                        other => Err(Error::InvalidConfig(format!("bad mask char {other:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(&rows)
    }
}

/// CSR adjacency: `indices[offsets[k]..offsets[k + 1]]` for entry `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockLists {
    offsets: Vec<u32>,
    indices: Vec<u32>,
}

impl BlockLists {
    #[inline]
    pub fn get(&self, k: usize) -> &[u32] {
        &self.indices[self.offsets[k] as usize..self.offsets[k + 1] as usize]
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn total(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[u32]> + '_ {
        (0..self.len()).map(move |k| self.get(k))
    }

    fn storage_bytes(&self) -> usize {
        (self.offsets.len() + self.indices.len()) * std::mem::size_of::<u32>()
    }
}

/// Pointer-increment lookup tables derived from a [`BlockMask`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupTables {
    t_r: usize,
    t_c: usize,
    per_query_block: BlockLists,
    per_key_block: BlockLists,
}

impl LookupTables {
    #[inline]
    pub fn t_r(&self) -> usize {
        self.t_r
    }

    #[inline]
    pub fn t_c(&self) -> usize {
        self.t_c
    }

    /// Key blocks visited by query block `i`, increasing.
    #[inline]
    pub fn key_blocks(&self, i: usize) -> &[u32] {
        self.per_query_block.get(i)
    }

    /// Query blocks that touch key block `j`, increasing.
    #[inline]
    pub fn query_blocks(&self, j: usize) -> &[u32] {
        self.per_key_block.get(j)
    }

    pub fn per_query_block(&self) -> &BlockLists {
        &self.per_query_block
    }

    pub fn per_key_block(&self) -> &BlockLists {
        &self.per_key_block
    }

    /// `Σ_i |Q_i|`, which equals the mask popcount.
    pub fn active_blocks(&self) -> usize {
        self.per_query_block.total()
    }

    pub fn storage_bytes(&self) -> usize {
        self.per_query_block.storage_bytes() + self.per_key_block.storage_bytes()
    }

    /// Rebuilds the mask from the per-query-block table.
    pub fn to_mask(&self) -> BlockMask {
        let mut m = BlockMask::new(self.t_r, self.t_c);
        for i in 0..self.t_r {
            for &j in self.key_blocks(i) {
                m.set(i, j as usize, true);
            }
        }
        m
    }

    /// Rebuilds the mask from the per-key-block table.
    pub fn to_mask_from_key_table(&self) -> BlockMask {
        let mut m = BlockMask::new(self.t_r, self.t_c);
        for j in 0..self.t_c {
            for &i in self.query_blocks(j) {
                m.set(i as usize, j, true);
            }
        }
        m
    }
}

pub fn build_tables(mask: &BlockMask) -> LookupTables {
    let (t_r, t_c) = (mask.t_r(), mask.t_c());
    let nnz = mask.count_ones();

    let mut q_offsets = Vec::with_capacity(t_r + 1);
    let mut q_indices = Vec::with_capacity(nnz);
    let mut col_counts = vec![0u32; t_c];
    q_offsets.push(0u32);
    for i in 0..t_r {
        for j in 0..t_c {
            if mask.get(i, j) {
                q_indices.push(j as u32);
                col_counts[j] += 1;
            }
        }
        q_offsets.push(q_indices.len() as u32);
    }

    let mut k_offsets = Vec::with_capacity(t_c + 1);
    k_offsets.push(0u32);
    for &c in &col_counts {
        let last = *k_offsets.last().unwrap();
        k_offsets.push(last + c);
    }
    let mut cursor: Vec<u32> = k_offsets[..t_c].to_vec();
    let mut k_indices = vec![0u32; nnz];
    // Row-major scan keeps each key-block list increasing in i.
    for i in 0..t_r {
        for &j in &q_indices[q_offsets[i] as usize..q_offsets[i + 1] as usize] {
            let slot = &mut cursor[j as usize];
            k_indices[*slot as usize] = i as u32;
            *slot += 1;
        }
    }

    LookupTables {
        t_r,
        t_c,
        per_query_block: BlockLists {
            offsets: q_offsets,
            indices: q_indices,
        },
        per_key_block: BlockLists {
            offsets: k_offsets,
            indices: k_indices,
        },
    }
}

/// Fraction of set blocks; 0 for an empty grid.
pub fn mask_density(mask: &BlockMask) -> f64 {
    let total = mask.t_r() * mask.t_c();
    if total == 0 {
        0.0
    } else {
        mask.count_ones() as f64 / total as f64
    }
}
