//! Matrix-valued periodic fields sampled on uniform grids of the reduced
//! cell [0,1)^d, their discrete Fourier coefficients and trigonometric
//! synthesis on truncated mode sets.

use rustfft::num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};

use crate::linalg::*;

/// Multi-indices l ∈ {−N..N}^d, first axis slowest.
#[derive(Clone, Debug, PartialEq)]
pub struct Modes {
    pub d: usize,
    pub cutoff: usize,
    pub list: Vec<Vec<i64>>,
}

impl Modes {
    pub fn new(d: usize, cutoff: usize) -> Modes {
        let side = 2 * cutoff + 1;
        let total = side.pow(d as u32);
        let list = (0..total)
            .map(|mut idx| {
                let mut l = vec![0i64; d];
                for j in (0..d).rev() {
                    l[j] = (idx % side) as i64 - cutoff as i64;
                    idx /= side;
                }
                l
            })
            .collect();
        Modes { d, cutoff, list }
    }

    pub fn len(&self) -> usize {
        self.list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.list.is_empty()
    }

    pub fn side(&self) -> usize {
        2 * self.cutoff + 1
    }

    pub fn zero_index(&self) -> usize {
        self.len() / 2
    }

    pub fn index_of(&self, l: &[i64]) -> Option<usize> {
        let side = self.side() as i64;
        let mut idx = 0i64;
        for &lj in l {
            if lj.unsigned_abs() as usize > self.cutoff {
                return None;
            }
            idx = idx * side + lj + self.cutoff as i64;
        }
        Some(idx as usize)
    }

    /// Collocation grid with one point per mode and axis.
    pub fn coarse_grid(&self) -> Grid {
        Grid::new(vec![self.side(); self.d])
    }

    /// Grid on which products of a coefficient with a degree-N polynomial
    /// have alias-free coefficients up to degree N.
    pub fn fine_grid(&self) -> Grid {
        Grid::new(vec![2 * self.side(); self.d])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    pub shape: Vec<usize>,
}

impl Grid {
    pub fn new(shape: Vec<usize>) -> Grid {
        Grid { shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn d(&self) -> usize {
        self.shape.len()
    }

    /// Reduced coordinates y ∈ [0,1)^d of a point, row-major.
    pub fn coord(&self, mut idx: usize) -> Vec<f64> {
        let mut y = vec![0.0; self.d()];
        for j in (0..self.d()).rev() {
            y[j] = (idx % self.shape[j]) as f64 / self.shape[j] as f64;
            idx /= self.shape[j];
        }
        y
    }

    /// Flat index of the frequency q (taken modulo the grid).
    pub fn wrap(&self, q: &[i64]) -> usize {
        let mut idx = 0usize;
        for (j, &qj) in q.iter().enumerate() {
            let n = self.shape[j] as i64;
            idx = idx * self.shape[j] + qj.rem_euclid(n) as usize;
        }
        idx
    }
}

/// In-place unnormalized multi-dimensional DFT of a row-major array.
pub fn fftn(data: &mut [Complex64], shape: &[usize], dir: FftDirection) {
    let mut planner = FftPlanner::new();
    let total: usize = shape.iter().product();
    let mut stride = 1usize;
    for axis in (0..shape.len()).rev() {
        let n = shape[axis];
        if n > 1 {
            let fft = planner.plan_fft(n, dir);
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let block = n * stride;
            for outer in (0..total).step_by(block) {
                for inner in 0..stride {
                    for k in 0..n {
                        line[k] = data[outer + inner + k * stride];
                    }
                    fft.process(&mut line);
                    for k in 0..n {
                        data[outer + inner + k * stride] = line[k];
                    }
                }
            }
        }
        stride *= n;
    }
}

#[inline]
pub fn to_c64(z: Complex64) -> c64 {
    c64::new(z.re, z.im)
}

#[inline]
pub fn to_cx(z: c64) -> Complex64 {
    Complex64::new(z.re, z.im)
}

/// Grid samples of a `rows × cols` matrix function.
#[derive(Clone, Debug)]
pub struct Field {
    pub grid: Grid,
    pub rows: usize,
    pub cols: usize,
    pub vals: Vec<CMat>,
}

impl Field {
    pub fn from_fn(grid: &Grid, rows: usize, cols: usize, f: impl Fn(&[f64]) -> CMat) -> Field {
        let vals = (0..grid.len()).map(|i| f(&grid.coord(i))).collect();
        Field { grid: grid.clone(), rows, cols, vals }
    }

    pub fn constant(grid: &Grid, value: &CMat) -> Field {
        Field { grid: grid.clone(), rows: value.nrows(), cols: value.ncols(), vals: vec![value.clone(); grid.len()] }
    }

    pub fn mean(&self) -> CMat {
        let mut acc = zeros(self.rows, self.cols);
        for v in &self.vals {
            acc = &acc + v;
        }
        rscaled(&acc, 1.0 / self.vals.len() as f64)
    }

    pub fn map(&self, f: impl Fn(&CMat) -> CMat) -> Field {
        let vals: Vec<CMat> = self.vals.iter().map(f).collect();
        let (rows, cols) = vals.first().map(|v| (v.nrows(), v.ncols())).unwrap_or((0, 0));
        Field { grid: self.grid.clone(), rows, cols, vals }
    }

    /// Pointwise product `self(x) · other(x)`.
    pub fn mul(&self, other: &Field) -> Field {
        assert_eq!(self.grid, other.grid);
        let vals = self.vals.iter().zip(&other.vals).map(|(a, b)| a * b).collect();
        Field { grid: self.grid.clone(), rows: self.rows, cols: other.cols, vals }
    }

    pub fn add(&self, other: &Field) -> Field {
        let vals = self.vals.iter().zip(&other.vals).map(|(a, b)| a + b).collect();
        Field { grid: self.grid.clone(), rows: self.rows, cols: self.cols, vals }
    }

    pub fn adjoint(&self) -> Field {
        self.map(adj)
    }

    pub fn scale(&self, c: c64) -> Field {
        self.map(|a| scaled(a, c))
    }

    /// Largest pointwise spectral norm.
    pub fn sup_norm(&self) -> f64 {
        self.vals.iter().map(norm2).fold(0.0, f64::max)
    }

    /// Discrete Fourier coefficients `ĉ(q) = mean(c e^{-2πi q·y})`, stored at
    /// the wrapped index of q.
    pub fn spectrum(&self) -> Spectrum {
        let p = self.grid.len();
        let mut vals = vec![zeros(self.rows, self.cols); p];
        let mut buf = vec![Complex64::new(0.0, 0.0); p];
        for i in 0..self.rows {
            for j in 0..self.cols {
                for (k, v) in self.vals.iter().enumerate() {
                    buf[k] = to_cx(v[(i, j)]);
                }
                fftn(&mut buf, &self.grid.shape, FftDirection::Forward);
                for (k, z) in buf.iter().enumerate() {
                    vals[k][(i, j)] = to_c64(*z / p as f64);
                }
            }
        }
        Spectrum { grid: self.grid.clone(), vals }
    }

    /// Trigonometric interpolant resampled on another grid.
    pub fn resample(&self, grid: &Grid) -> Field {
        if *grid == self.grid {
            return self.clone();
        }
        let spec = self.spectrum();
        let d = self.grid.d();
        let mut coeffs = Vec::new();
        let mut freqs = Vec::new();
        for idx in 0..self.grid.len() {
            let mut rem = idx;
            let mut q = vec![0i64; d];
            let mut keep = true;
            for j in (0..d).rev() {
                let n = self.grid.shape[j];
                let raw = (rem % n) as i64;
                rem /= n;
                let qj = if raw > (n as i64) / 2 { raw - n as i64 } else { raw };
                if 2 * qj.unsigned_abs() as usize >= n.min(grid.shape[j]) {
                    keep = false;
                }
                q[j] = qj;
            }
            if keep {
                freqs.push(q);
                coeffs.push(spec.vals[idx].clone());
            }
        }
        synthesize_freqs(&freqs, &coeffs, self.rows, self.cols, grid)
    }
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    pub grid: Grid,
    pub vals: Vec<CMat>,
}

impl Spectrum {
    pub fn at(&self, q: &[i64]) -> &CMat {
        &self.vals[self.grid.wrap(q)]
    }
}

pub fn synthesize_freqs(freqs: &[Vec<i64>], coeffs: &[CMat], rows: usize, cols: usize, grid: &Grid) -> Field {
    let p = grid.len();
    let mut vals = vec![zeros(rows, cols); p];
    let mut buf = vec![Complex64::new(0.0, 0.0); p];
    for i in 0..rows {
        for j in 0..cols {
            buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for (q, c) in freqs.iter().zip(coeffs) {
                buf[grid.wrap(q)] += to_cx(c[(i, j)]);
            }
            fftn(&mut buf, &grid.shape, FftDirection::Inverse);
            for (k, z) in buf.iter().enumerate() {
                vals[k][(i, j)] = to_c64(*z);
            }
        }
    }
    Field { grid: grid.clone(), rows, cols, vals }
}

/// Σ_l c_l e^{2πi l·y} on `grid`, with `grid` at least as fine as the modes.
pub fn synthesize(modes: &Modes, coeffs: &[CMat], grid: &Grid) -> Field {
    let (rows, cols) = (coeffs[0].nrows(), coeffs[0].ncols());
    synthesize_freqs(&modes.list, coeffs, rows, cols, grid)
}

/// Mode coefficients of a field known to be a polynomial over `modes`.
pub fn analyze(field: &Field, modes: &Modes) -> Vec<CMat> {
    let spec = field.spectrum();
    modes.list.iter().map(|l| spec.at(l).clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn scalar(v: c64) -> CMat {
        let mut m = zeros(1, 1);
        m[(0, 0)] = v;
        m
    }

    #[test]
    fn spectrum_of_cosine() {
        let grid = Grid::new(vec![10, 6]);
        let f = Field::from_fn(&grid, 1, 1, |y| scalar(cr(2.0 + (2.0 * PI * (y[0] - 2.0 * y[1])).cos())));
        let s = f.spectrum();
        assert!((s.at(&[0, 0])[(0, 0)].re - 2.0).abs() < 1e-14);
        assert!((s.at(&[1, -2])[(0, 0)].re - 0.5).abs() < 1e-14);
        assert!((s.at(&[-1, 2])[(0, 0)].re - 0.5).abs() < 1e-14);
        assert!(s.at(&[1, 2])[(0, 0)].abs() < 1e-14);
    }

    #[test]
    fn synthesis_round_trip() {
        let modes = Modes::new(2, 3);
        let coeffs: Vec<CMat> = (0..modes.len()).map(|i| scalar(cplx(i as f64 * 0.1, -(i as f64).sin()))).collect();
        let field = synthesize(&modes, &coeffs, &modes.fine_grid());
        let back = analyze(&field, &modes);
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).norm_l2() < 1e-12);
        }
        let coarse = synthesize(&modes, &coeffs, &modes.coarse_grid());
        let back = analyze(&coarse, &modes);
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).norm_l2() < 1e-12);
        }
    }

    #[test]
    fn resample_band_limited_is_exact() {
        let g1 = Grid::new(vec![9]);
        let g2 = Grid::new(vec![16]);
        let f = |y: &[f64]| scalar(cr((2.0 * PI * y[0]).sin() + 0.3 * (6.0 * PI * y[0]).cos()));
        let a = Field::from_fn(&g1, 1, 1, f).resample(&g2);
        let b = Field::from_fn(&g2, 1, 1, f);
        for (x, y) in a.vals.iter().zip(&b.vals) {
            assert!((x - y).norm_l2() < 1e-13);
        }
    }

    #[test]
    fn mode_indexing() {
        let modes = Modes::new(2, 2);
        assert_eq!(modes.len(), 25);
        assert_eq!(modes.list[modes.zero_index()], vec![0, 0]);
        for (i, l) in modes.list.iter().enumerate() {
            assert_eq!(modes.index_of(l), Some(i));
        }
        assert_eq!(modes.index_of(&[3, 0]), None);
    }
}
