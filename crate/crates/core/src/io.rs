//! Binary grid files and JSON export of cell solutions.
//!
//! Grid file layout (little endian): magic `PHOM`, u32 d, u32 block size,
//! d × u32 grid dims, then for every grid point in row-major order the
//! block's entries in row-major order as interleaved (re, im) f64 pairs.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};
use crate::linalg::*;
use crate::periodic::{CellSolution, Field, Grid};

const MAGIC: &[u8; 4] = b"PHOM";

pub fn write_grid<W: Write>(mut w: W, field: &Field) -> Result<()> {
    if field.rows != field.cols {
        return Err(HomogError::InvalidInput(format!("grid files hold square blocks, got {}x{}", field.rows, field.cols)));
    }
    let io = |e: std::io::Error| HomogError::Data(e.to_string());
    let mut buf = Vec::with_capacity(12 + 4 * field.grid.d() + 16 * field.vals.len() * field.rows * field.cols);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(field.grid.d() as u32).to_le_bytes());
    buf.extend_from_slice(&(field.rows as u32).to_le_bytes());
    for &s in &field.grid.shape {
        buf.extend_from_slice(&(s as u32).to_le_bytes());
    }
    for v in &field.vals {
        for i in 0..field.rows {
            for j in 0..field.cols {
                buf.extend_from_slice(&v[(i, j)].re.to_le_bytes());
                buf.extend_from_slice(&v[(i, j)].im.to_le_bytes());
            }
        }
    }
    w.write_all(&buf).map_err(io)
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self.data.get(self.pos..self.pos + n).ok_or_else(|| HomogError::Data(format!("grid file truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_grid<R: Read>(mut r: R) -> Result<Field> {
    let mut data = Vec::new();
    r.read_to_end(&mut data).map_err(|e| HomogError::Data(e.to_string()))?;
    let mut cur = Cursor { data: &data, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(HomogError::Data("missing PHOM magic".into()));
    }
    let d = cur.u32()?;
    let size = cur.u32()?;
    if d == 0 || d > 3 || size == 0 {
        return Err(HomogError::Data(format!("bad header: d = {d}, block size = {size}")));
    }
    let mut shape = Vec::with_capacity(d);
    for _ in 0..d {
        let s = cur.u32()?;
        if s == 0 {
            return Err(HomogError::Data("zero grid dimension".into()));
        }
        shape.push(s);
    }
    let grid = Grid::new(shape);
    let expected = grid.len() * size * size * 16;
    if data.len() - cur.pos != expected {
        return Err(HomogError::Data(format!("expected {expected} data bytes, found {}", data.len() - cur.pos)));
    }
    let mut vals = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        let mut m = zeros(size, size);
        for i in 0..size {
            for j in 0..size {
                let (re, im) = (cur.f64()?, cur.f64()?);
                if !re.is_finite() || !im.is_finite() {
                    return Err(HomogError::Data("non-finite sample".into()));
                }
                m[(i, j)] = cplx(re, im);
            }
        }
        vals.push(m);
    }
    Ok(Field { grid, rows: size, cols: size, vals })
}

/// Complex matrix as nested real and imaginary arrays.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct JsonMatrix {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&CMat> for JsonMatrix {
    fn from(m: &CMat) -> Self {
        let rows = |f: fn(c64) -> f64| (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| f(m[(i, j)])).collect()).collect();
        JsonMatrix { re: rows(|z| z.re), im: rows(|z| z.im) }
    }
}

impl JsonMatrix {
    pub fn to_mat(&self) -> Result<CMat> {
        let r = self.re.len();
        let c = self.re.first().map_or(0, Vec::len);
        let ragged = self.im.len() != r || self.re.iter().chain(&self.im).any(|row| row.len() != c);
        if ragged {
            return Err(HomogError::Data("ragged or mismatched re/im arrays".into()));
        }
        Ok(CMat::from_fn(r, c, |i, j| cplx(self.re[i][j], self.im[i][j])))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CellExport {
    pub g0: JsonMatrix,
    pub v: JsonMatrix,
    pub w: JsonMatrix,
    pub qbar: JsonMatrix,
    pub f0: JsonMatrix,
    pub lambda_g0: JsonMatrix,
    pub lambda_tilde_g0: JsonMatrix,
}

impl From<&CellSolution> for CellExport {
    fn from(c: &CellSolution) -> Self {
        CellExport {
            g0: (&c.g0).into(),
            v: (&c.v).into(),
            w: (&c.w).into(),
            qbar: (&c.qbar).into(),
            f0: (&c.f0).into(),
            lambda_g0: (&c.lam_g0).into(),
            lambda_tilde_g0: (&c.lamt_g0).into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodic::{CellOptions, FiberSystem, PeriodicProblem};
    use proptest::prelude::*;

    fn sample_field(shape: Vec<usize>, size: usize, seed: f64) -> Field {
        let grid = Grid::new(shape);
        Field::from_fn(&grid, size, size, |y| CMat::from_fn(size, size, |i, j| cplx(y[0] + seed * i as f64, j as f64 - seed)))
    }

    #[test]
    fn rejects_bad_magic() {
        let mut buf = Vec::new();
        write_grid(&mut buf, &sample_field(vec![4], 1, 0.5)).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_grid(&buf[..]), Err(HomogError::Data(_))));
    }

    #[test]
    fn rejects_truncation() {
        let mut buf = Vec::new();
        write_grid(&mut buf, &sample_field(vec![3, 5], 2, 0.1)).unwrap();
        buf.pop();
        assert!(read_grid(&buf[..]).is_err());
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_grid(&mut buf, &sample_field(vec![3, 5], 2, 0.1)).unwrap();
        assert_eq!(&buf[..4], b"PHOM");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 2);
        assert_eq!(buf.len(), 4 + 4 + 4 + 8 + 15 * 4 * 16);
    }

    #[test]
    fn cell_export_round_trip() {
        let fs = FiberSystem::new(&PeriodicProblem::harmonic_mean_1d(), 16).unwrap();
        let cell = CellSolution::solve(&fs, &CellOptions::default()).unwrap();
        let ex = CellExport::from(&cell);
        let text = serde_json::to_string(&ex).unwrap();
        let back: CellExport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ex);
        assert!((back.g0.to_mat().unwrap()[(0, 0)].re - 3f64.sqrt()).abs() < 1e-10);
    }

    proptest! {
        #[test]
        fn grid_round_trip(dims in prop::collection::vec(1usize..5, 1..=3), size in 1usize..3, seed in -2.0f64..2.0) {
            let f = sample_field(dims, size, seed);
            let mut buf = Vec::new();
            write_grid(&mut buf, &f).unwrap();
            let g = read_grid(&buf[..]).unwrap();
            prop_assert_eq!(&g.grid.shape, &f.grid.shape);
            for (a, b) in g.vals.iter().zip(&f.vals) {
                prop_assert!((a - b).norm_l2() == 0.0);
            }
        }
    }
}
