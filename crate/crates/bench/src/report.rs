//! Row types and their CSV / table renderings.

use std::io::Write;

use serde::Serialize;

use crate::config::Method;
use crate::error::Result;

pub const BENCH_HEADER: [&str; 13] = [
    "method",
    "n",
    "d",
    "alpha",
    "sigma2",
    "seed",
    "fwd_ms",
    "bwd_ms",
    "iters_to_tol",
    "peak_aux_bytes",
    "visited_blocks",
    "total_blocks",
    "attn_sparsity",
];

pub const CONVERGENCE_HEADER: [&str; 10] = [
    "method",
    "n",
    "alpha",
    "sigma2",
    "seed",
    "iteration",
    "mae",
    "max_abs_err",
    "bracket_width",
    "reference",
];

/// One benchmark result. Columns that do not apply to a method are empty.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: Method,
    pub n: usize,
    pub d: Option<usize>,
    pub alpha: f64,
    pub sigma2: f64,
    pub seed: u64,
    pub fwd_ms: Option<f64>,
    pub bwd_ms: Option<f64>,
    pub iters_to_tol: Option<usize>,
    pub peak_aux_bytes: Option<u64>,
    pub visited_blocks: Option<u64>,
    pub total_blocks: Option<u64>,
    pub attn_sparsity: Option<f64>,
}

impl BenchRow {
    pub fn total_ms(&self) -> Option<f64> {
        Some(self.fwd_ms? + self.bwd_ms.unwrap_or(0.0))
    }

    pub fn visited_fraction(&self) -> Option<f64> {
        Some(self.visited_blocks? as f64 / self.total_blocks? as f64)
    }
}

/// Error of one solver iterate against the reference distribution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub method: Method,
    pub n: usize,
    pub alpha: f64,
    pub sigma2: f64,
    pub seed: u64,
    pub iteration: usize,
    pub mae: f64,
    pub max_abs_err: f64,
    /// Width of the bracket around τ after this iteration.
    pub bracket_width: f64,
    /// Which solver produced the reference.
    pub reference: &'static str,
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn write_rows<W: Write, R: Serialize>(w: W, header: &[&str], rows: &[R]) -> Result<()> {
    let mut out = writer(w);
    out.write_record(header)?;
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_bench_csv<W: Write>(w: W, rows: &[BenchRow]) -> Result<()> {
    write_rows(w, &BENCH_HEADER, rows)
}

pub fn write_convergence_csv<W: Write>(w: W, rows: &[ConvergenceRow]) -> Result<()> {
    write_rows(w, &CONVERGENCE_HEADER, rows)
}

/// Left-aligned text table with a rule under the header.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out += &line(&mut rule.iter().map(String::as_str));
    for r in rows {
        out += &line(&mut r.iter().map(String::as_str));
    }
    out
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".into(), |x| x.to_string())
}

fn ms(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

pub fn bench_table(rows: &[BenchRow]) -> String {
    let header = [
        "method", "n", "d", "alpha", "sigma2", "seed", "fwd_ms", "bwd_ms", "total_ms",
        "iters_to_tol", "aux_bytes", "visited", "total", "sparsity",
    ];
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                r.n.to_string(),
                opt(r.d),
                r.alpha.to_string(),
                r.sigma2.to_string(),
                r.seed.to_string(),
                ms(r.fwd_ms),
                ms(r.bwd_ms),
                ms(r.total_ms()),
                opt(r.iters_to_tol),
                opt(r.peak_aux_bytes),
                opt(r.visited_blocks),
                opt(r.total_blocks),
                r.attn_sparsity.map_or_else(|| "-".into(), |x| format!("{x:.4}")),
            ]
        })
        .collect();
    render_table(&header, &cells)
}

pub fn convergence_table(rows: &[ConvergenceRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.method.to_string(),
                r.n.to_string(),
                r.alpha.to_string(),
                r.sigma2.to_string(),
                r.seed.to_string(),
                r.iteration.to_string(),
                format!("{:.3e}", r.mae),
                format!("{:.3e}", r.max_abs_err),
                format!("{:.3e}", r.bracket_width),
                r.reference.to_string(),
            ]
        })
        .collect();
    render_table(&CONVERGENCE_HEADER, &cells)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> BenchRow {
        BenchRow {
            method: Method::BlockedMasked,
            n: 64,
            d: Some(8),
            alpha: 1.5,
            sigma2: 6.0,
            seed: 3,
            fwd_ms: Some(0.25),
            bwd_ms: Some(0.5),
            iters_to_tol: None,
            peak_aux_bytes: Some(1234),
            visited_blocks: Some(3),
            total_blocks: Some(4),
            attn_sparsity: Some(0.875),
        }
    }

    #[test]
    fn csv_header_and_empty_columns() {
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &[row()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "method,n,d,alpha,sigma2,seed,fwd_ms,bwd_ms,iters_to_tol,peak_aux_bytes,visited_blocks,total_blocks,attn_sparsity\n\
             blocked_masked,64,8,1.5,6.0,3,0.25,0.5,,1234,3,4,0.875\n"
        );
    }

    #[test]
    fn header_written_without_rows() {
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &[]).unwrap();
        assert_eq!(buf, (BENCH_HEADER.join(",") + "\n").into_bytes());
    }

    #[test]
    fn table_aligns_columns() {
        let t = render_table(&["a", "long"], &[vec!["xyz".into(), "1".into()]]);
        assert_eq!(t, "a    long\n---  ----\nxyz  1\n");
        assert!(bench_table(&[row()]).contains("0.750"));
    }

    #[test]
    fn derived_columns() {
        assert_eq!(row().visited_fraction(), Some(0.75));
        assert_eq!(row().total_ms(), Some(0.75));
    }
}
