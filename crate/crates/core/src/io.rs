//! Binary field snapshots and CSV tables.
//!
//! A snapshot is a 32-byte header (`CHNSFLD1`, `n_x` and `n_y` as little-endian
//! `u32`, `l_x` and `l_y` as little-endian `f64`) followed by row-major
//! little-endian `f64` values. Vector fields store the x block, then the y block.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid, VectorField};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"CHNSFLD1";
const HEADER_LEN: usize = 32;

fn header(grid: &TorusGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(grid.nx() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.ny() as u32).to_le_bytes());
    out.extend_from_slice(&grid.lx().to_le_bytes());
    out.extend_from_slice(&grid.ly().to_le_bytes());
    out
}

fn encode(grid: &TorusGrid, blocks: &[&[f64]]) -> Vec<u8> {
    let mut out = header(grid);
    for block in blocks {
        for v in block.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn encode_scalar(field: &ScalarField) -> Vec<u8> {
    encode(field.grid(), &[field.values()])
}

pub fn encode_vector(field: &VectorField) -> Vec<u8> {
    encode(field.grid(), &[field.x(), field.y()])
}

/// Parses a snapshot, returning its grid and the raw value blocks.
pub fn decode(bytes: &[u8]) -> Result<(TorusGrid, Vec<Vec<f64>>)> {
    if bytes.len() < HEADER_LEN || &bytes[..8] != SNAPSHOT_MAGIC {
        return Err(Error::Format("missing CHNSFLD1 header".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let grid = TorusGrid::new(u32_at(8), u32_at(12), f64_at(16), f64_at(24))?;
    let body = &bytes[HEADER_LEN..];
    let block_bytes = grid.len() * 8;
    if body.is_empty() || !body.len().is_multiple_of(block_bytes) {
        return Err(Error::Format(format!(
            "payload of {} bytes is not a whole number of {}-value blocks",
            body.len(),
            grid.len()
        )));
    }
    let blocks = body
        .chunks(block_bytes)
        .map(|chunk| {
            chunk
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((grid, blocks))
}

pub fn write_scalar(path: &Path, field: &ScalarField) -> Result<()> {
    write_bytes(path, &encode_scalar(field))
}

pub fn write_vector(path: &Path, field: &VectorField) -> Result<()> {
    write_bytes(path, &encode_vector(field))
}

pub fn read_scalar(path: &Path) -> Result<ScalarField> {
    let (grid, mut blocks) = decode(&read_bytes(path)?)?;
    if blocks.len() != 1 {
        return Err(Error::Format(format!("expected 1 block, found {}", blocks.len())));
    }
    ScalarField::new(grid, blocks.pop().unwrap())
}

pub fn read_vector(path: &Path) -> Result<VectorField> {
    let (grid, mut blocks) = decode(&read_bytes(path)?)?;
    if blocks.len() != 2 {
        return Err(Error::Format(format!("expected 2 blocks, found {}", blocks.len())));
    }
    let y = blocks.pop().unwrap();
    let x = blocks.pop().unwrap();
    VectorField::new(grid, x, y)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders a CSV table. Numbers use 17 significant digits.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.iter().map(|&v| fmt_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    f.write_all(csv_string(header, rows).as_bytes())
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snapshot_round_trip() {
        let g = TorusGrid::new(8, 10, 1.5, 2.5).unwrap();
        let s = ScalarField::from_fn(g, |x, y| x * 3.0 - y);
        let v = VectorField::from_fn(g, |x, y| (x.sin(), y.cos()));
        let dir = tempfile::tempdir().unwrap();
        write_scalar(&dir.path().join("s.bin"), &s).unwrap();
        write_vector(&dir.path().join("v.bin"), &v).unwrap();
        assert_eq!(read_scalar(&dir.path().join("s.bin")).unwrap(), s);
        let back = read_vector(&dir.path().join("v.bin")).unwrap();
        assert_eq!(back.x(), v.x());
        assert_eq!(back.y(), v.y());
    }

    #[test]
    fn header_layout() {
        let g = TorusGrid::new(8, 8, 1.0, 2.0).unwrap();
        let bytes = encode_scalar(&ScalarField::zeros(g));
        assert_eq!(&bytes[..8], b"CHNSFLD1");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 8);
        assert_eq!(f64::from_le_bytes(bytes[24..32].try_into().unwrap()), 2.0);
        assert_eq!(bytes.len(), 32 + 64 * 8);
    }

    #[test]
    fn rejects_truncated_payload() {
        let g = TorusGrid::square(8).unwrap();
        let mut bytes = encode_scalar(&ScalarField::zeros(g));
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(Error::Format(_))));
        assert!(decode(b"NOTMAGIC").is_err());
    }

    #[test]
    fn csv_uses_seventeen_digits() {
        let s = csv_string(&["a", "b"], &[vec![1.0 / 3.0, 2.0]]);
        assert_eq!(s, "a,b\n3.3333333333333331e-1,2.0000000000000000e0\n");
    }
}
