//! `ATN1` tensor files: a 16-byte little-endian header (magic, rows, cols,
//! dtype code 0 = f32 / 1 = f64) followed by the row-major payload.

use std::io::{Read, Write};

use entmax_attention::{DenseMatrix, Precision};

use crate::error::{BenchError, Result};

pub const MAGIC: &[u8; 4] = b"ATN1";

fn dtype_code(p: Precision) -> u32 {
    match p {
        Precision::Single => 0,
        Precision::Double => 1,
    }
}

pub fn write_tensor(w: &mut impl Write, m: &DenseMatrix, precision: Precision) -> Result<()> {
    let dim = |v: usize| {
        u32::try_from(v).map_err(|_| BenchError::Format(format!("dimension {v} exceeds u32")))
    };
    let mut header = [0u8; 16];
    header[..4].copy_from_slice(MAGIC);
    header[4..8].copy_from_slice(&dim(m.rows())?.to_le_bytes());
    header[8..12].copy_from_slice(&dim(m.cols())?.to_le_bytes());
    header[12..].copy_from_slice(&dtype_code(precision).to_le_bytes());
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(m.as_slice().len() * precision.width());
    for &x in m.as_slice() {
        match precision {
            Precision::Single => buf.extend_from_slice(&(x as f32).to_le_bytes()),
            Precision::Double => buf.extend_from_slice(&x.to_le_bytes()),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a tensor, widening f32 payloads to f64.
pub fn read_tensor(r: &mut impl Read) -> Result<(DenseMatrix, Precision)> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if &header[..4] != MAGIC {
        return Err(BenchError::Format("missing ATN1 magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let (rows, cols) = (word(4) as usize, word(8) as usize);
    let precision = match word(12) {
        0 => Precision::Single,
        1 => Precision::Double,
        c => return Err(BenchError::Format(format!("unknown dtype code {c}"))),
    };
    let mut payload = vec![0u8; rows * cols * precision.width()];
    r.read_exact(&mut payload)?;
    let data: Vec<f64> = match precision {
        Precision::Single => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
        Precision::Double => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
    };
    Ok((DenseMatrix::from_vec(rows, cols, data)?, precision))
}
