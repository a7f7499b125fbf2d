//! Bit-stable persistence: CSV tables with 17-significant-digit floats, JSON
//! summaries, and binary field snapshots.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nlsv_core::{Complex64, FieldState, Grid};
use serde::Serialize;

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// A numeric table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// `{:.16e}`: 17 significant digits, enough to round-trip every `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format_float(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        String::from_utf8(buf).map_err(|e| LabError::Format(e.to_string()))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map_err(|e| LabError::Format(format!("{s}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != columns.len() {
                return Err(LabError::Format("ragged row".into()));
            }
            rows.push(row);
        }
        Ok(Self { columns, rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"NLSFLD01";
pub const SNAPSHOT_HEADER: usize = 64;

/// Header: magic, `dim` (u64), `N` (u64), `L` (f64), `t` (f64), zero padding to
/// 64 bytes; then `(re, im)` pairs as little-endian `f64` in grid order.
pub fn write_snapshot<W: Write>(mut out: W, psi: &FieldState, time: f64) -> Result<()> {
    let g = psi.grid();
    let mut header = [0u8; SNAPSHOT_HEADER];
    header[..8].copy_from_slice(SNAPSHOT_MAGIC);
    header[8..16].copy_from_slice(&(g.dim() as u64).to_le_bytes());
    header[16..24].copy_from_slice(&(g.n() as u64).to_le_bytes());
    header[24..32].copy_from_slice(&g.length().to_le_bytes());
    header[32..40].copy_from_slice(&time.to_le_bytes());
    out.write_all(&header)?;
    let mut body = Vec::with_capacity(16 * g.len());
    for v in psi.values() {
        body.extend_from_slice(&v.re.to_le_bytes());
        body.extend_from_slice(&v.im.to_le_bytes());
    }
    out.write_all(&body)?;
    Ok(())
}

/// Returns the field (on a fresh grid) and its time stamp.
pub fn read_snapshot<R: Read>(mut input: R) -> Result<(FieldState, f64)> {
    let mut header = [0u8; SNAPSHOT_HEADER];
    input.read_exact(&mut header)?;
    if &header[..8] != SNAPSHOT_MAGIC {
        return Err(LabError::Format("bad snapshot magic".into()));
    }
    let word = |i: usize| -> [u8; 8] { header[i..i + 8].try_into().unwrap() };
    let dim = u64::from_le_bytes(word(8)) as usize;
    let n = u64::from_le_bytes(word(16)) as usize;
    let length = f64::from_le_bytes(word(24));
    let time = f64::from_le_bytes(word(32));
    let grid: Arc<Grid> = Grid::new(dim, n, length)?;
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() != 16 * grid.len() {
        return Err(LabError::Format(format!(
            "expected {} data bytes, found {}",
            16 * grid.len(),
            body.len()
        )));
    }
    let values = body
        .chunks_exact(16)
        .map(|c| {
            Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok((FieldState::from_values(&grid, values)?, time))
}

/// `|psi|^2` along the first axis through the box center, for plotting.
pub fn density_profile(psi: &FieldState) -> Table {
    let g = psi.grid();
    let n = g.n();
    let mut t = Table::new(&["x", "density"]);
    for i in 0..n {
        let idx = match g.dim() {
            1 => i,
            _ => i * n * n + (n / 2) * n + n / 2,
        };
        t.push(vec![g.coord(i), psi.values()[idx].norm_sqr()]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        for v in [
            0.1,
            1.0 / 3.0,
            -2.5e-300,
            6.02214076e23,
            f64::MIN_POSITIVE,
            std::f64::consts::PI,
        ] {
            assert_eq!(
                format_float(v).parse::<f64>().unwrap().to_bits(),
                v.to_bits()
            );
        }
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec![0.1, 1e-17]);
        t.push(vec![-3.3333333333333335, 7.0]);
        let s = t.to_csv_string().unwrap();
        let back = Table::read_csv(s.as_bytes()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv_string().unwrap(), s);
    }

    #[test]
    fn snapshot_round_trip() {
        let g = Grid::new(1, 16, 7.5).unwrap();
        let psi = FieldState::from_fn(&g, |x| {
            Complex64::new(x[0].sin(), 1.0 / (1.0 + x[0] * x[0]))
        });
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &psi, 2.25).unwrap();
        assert_eq!(buf.len(), 64 + 16 * 16);
        assert_eq!(&buf[..8], b"NLSFLD01");
        let (back, t) = read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(t, 2.25);
        assert_eq!(back.values(), psi.values());
        assert_eq!(back.grid().length(), 7.5);
    }

    #[test]
    fn snapshot_rejects_truncation() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&mut buf, &FieldState::zeros(&g), 0.0).unwrap();
        buf.pop();
        assert!(read_snapshot(buf.as_slice()).is_err());
        buf[0] = b'X';
        assert!(read_snapshot(buf.as_slice()).is_err());
    }
}
