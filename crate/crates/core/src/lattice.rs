//! Lattice geometry: dual basis, cell volume and the inscribed and
//! circumscribed radii of the Brillouin zone.

use crate::error::{HomogError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Lattice {
    pub d: usize,
    /// `basis[j]` is the vector a_j.
    pub basis: Vec<Vec<f64>>,
    /// `dual[l]` is the vector b^l with ⟨b^l, a_j⟩ = 2π δ_lj.
    pub dual: Vec<Vec<f64>>,
    pub cell_volume: f64,
    pub r0: f64,
    pub r1: f64,
}

fn det(m: &[Vec<f64>]) -> f64 {
    match m.len() {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => f64::NAN,
    }
}

/// Solves `a x = rhs` for d ≤ 3 by Cramer's rule.
fn cramer(a: &[Vec<f64>], rhs: &[f64]) -> Option<Vec<f64>> {
    let dt = det(a);
    if dt.abs() < 1e-14 {
        return None;
    }
    let d = a.len();
    Some(
        (0..d)
            .map(|c| {
                let mut m = a.to_vec();
                for r in 0..d {
                    m[r][c] = rhs[r];
                }
                det(&m) / dt
            })
            .collect(),
    )
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Lattice {
    pub fn new(basis: Vec<Vec<f64>>) -> Result<Lattice> {
        let d = basis.len();
        if !(1..=3).contains(&d) || basis.iter().any(|v| v.len() != d) {
            return Err(HomogError::InvalidInput(format!("lattice basis must be d vectors of length d, d in 1..=3 (got {d})")));
        }
        let rows: Vec<Vec<f64>> = (0..d).map(|r| (0..d).map(|c| basis[c][r]).collect()).collect();
        let vol = det(&rows).abs();
        let scale: f64 = basis.iter().map(|v| dot(v, v).sqrt()).product();
        if vol < 1e-12 * scale.max(1e-300) {
            return Err(HomogError::SingularBasis(vol));
        }
        // rows of A^T are the a_j; dual vectors solve A^T b^l = 2π e_l
        let dual: Vec<Vec<f64>> = (0..d)
            .map(|l| {
                let rhs: Vec<f64> = (0..d).map(|j| if j == l { 2.0 * std::f64::consts::PI } else { 0.0 }).collect();
                cramer(&basis, &rhs).expect("nonsingular basis")
            })
            .collect();
        let (r0, r1) = brillouin_radii(&dual);
        Ok(Lattice { d, basis, dual, cell_volume: vol, r0, r1 })
    }

    pub fn cubic(d: usize) -> Lattice {
        let basis = (0..d).map(|j| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        Lattice::new(basis).expect("unit lattice")
    }

    /// ξ = Σ l_j b^j.
    pub fn dual_point(&self, l: &[i64]) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        for (j, &lj) in l.iter().enumerate() {
            for i in 0..self.d {
                x[i] += lj as f64 * self.dual[j][i];
            }
        }
        x
    }

    /// x = Σ y_j a_j.
    pub fn cell_point(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        for (j, &yj) in y.iter().enumerate() {
            for i in 0..self.d {
                x[i] += yj * self.basis[j][i];
            }
        }
        x
    }

    /// Orthogonal bases admit the rectangular box decomposition used by the
    /// evolution solvers.
    pub fn is_orthogonal(&self) -> bool {
        for i in 0..self.d {
            for j in 0..i {
                let c = dot(&self.basis[i], &self.basis[j]);
                if c.abs() > 1e-12 * dot(&self.basis[i], &self.basis[i]).sqrt() * dot(&self.basis[j], &self.basis[j]).sqrt() {
                    return false;
                }
            }
        }
        true
    }

    /// Reduces k to the Brillouin zone by subtracting the nearest dual
    /// lattice point.
    pub fn reduce(&self, k: &[f64]) -> Vec<f64> {
        let cands = small_dual_points(&self.dual, 2);
        let mut best = k.to_vec();
        loop {
            let mut improved = false;
            for b in &cands {
                let trial: Vec<f64> = best.iter().zip(b).map(|(x, y)| x - y).collect();
                if dot(&trial, &trial) < dot(&best, &best) - 1e-12 {
                    best = trial;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }
}

fn small_dual_points(dual: &[Vec<f64>], reach: i64) -> Vec<Vec<f64>> {
    let d = dual.len();
    let side = (2 * reach + 1) as usize;
    let mut out = Vec::new();
    for idx in 0..side.pow(d as u32) {
        let mut rem = idx;
        let mut l = vec![0i64; d];
        for lj in l.iter_mut() {
            *lj = (rem % side) as i64 - reach;
            rem /= side;
        }
        if l.iter().all(|&v| v == 0) {
            continue;
        }
        let mut x = vec![0.0; d];
        for (j, &lj) in l.iter().enumerate() {
            for i in 0..d {
                x[i] += lj as f64 * dual[j][i];
            }
        }
        out.push(x);
    }
    out
}

/// r0: half the shortest nonzero dual vector. r1: largest distance from the
/// origin to a vertex of the Voronoi cell of the dual lattice.
fn brillouin_radii(dual: &[Vec<f64>]) -> (f64, f64) {
    let d = dual.len();
    let cands = small_dual_points(dual, 2);
    let r0 = cands.iter().map(|b| dot(b, b).sqrt()).fold(f64::INFINITY, f64::min) / 2.0;
    if d == 1 {
        return (r0, r0);
    }
    let inside = |x: &[f64]| cands.iter().all(|b| dot(x, b) <= 0.5 * dot(b, b) * (1.0 + 1e-10) + 1e-12);
    let mut r1 = r0;
    let m = cands.len();
    let mut visit = |sel: &[usize]| {
        let a: Vec<Vec<f64>> = sel.iter().map(|&i| cands[i].clone()).collect();
        let rhs: Vec<f64> = sel.iter().map(|&i| 0.5 * dot(&cands[i], &cands[i])).collect();
        if let Some(x) = cramer(&a, &rhs) {
            if inside(&x) {
                r1 = r1.max(dot(&x, &x).sqrt());
            }
        }
    };
    for i in 0..m {
        for j in i + 1..m {
            if d == 2 {
                visit(&[i, j]);
            } else {
                for k in j + 1..m {
                    visit(&[i, j, k]);
                }
            }
        }
    }
    (r0, r1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn cubic_lattices() {
        let l1 = Lattice::cubic(1);
        assert!((l1.r0 - PI).abs() < 1e-12 && (l1.r1 - PI).abs() < 1e-12 && (l1.cell_volume - 1.0).abs() < 1e-14);
        let l2 = Lattice::cubic(2);
        assert!((l2.r0 - PI).abs() < 1e-12 && (l2.r1 - PI * 2f64.sqrt()).abs() < 1e-12);
        let l3 = Lattice::cubic(3);
        assert!((l3.r1 - PI * 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn duality_relation() {
        let lat = Lattice::new(vec![vec![1.0, 0.2], vec![0.3, 1.5]]).unwrap();
        for l in 0..2 {
            for j in 0..2 {
                let want = if l == j { 2.0 * PI } else { 0.0 };
                assert!((dot(&lat.dual[l], &lat.basis[j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_basis_rejected() {
        let err = Lattice::new(vec![vec![1.0, 2.0], vec![2.0, 4.0]]).unwrap_err();
        assert!(matches!(err, HomogError::SingularBasis(_)));
    }

    /// Ray casting against the half-planes of nearby dual vectors.
    fn ray_oracle(lat: &Lattice) -> (f64, f64) {
        let cands = small_dual_points(&lat.dual, 3);
        let (mut rmin, mut rmax) = (f64::INFINITY, 0.0f64);
        for k in 0..200_000 {
            let a = 2.0 * PI * k as f64 / 200_000.0;
            let u = [a.cos(), a.sin()];
            let r = cands
                .iter()
                .filter(|b| dot(&u, b) > 0.0)
                .map(|b| 0.5 * dot(b, b) / dot(&u, b))
                .fold(f64::INFINITY, f64::min);
            rmin = rmin.min(r);
            rmax = rmax.max(r);
        }
        (rmin, rmax)
    }

    #[test]
    fn hexagonal_radii_match_ray_oracle() {
        let lat = Lattice::new(vec![vec![1.0, 0.0], vec![0.5, 3f64.sqrt() / 2.0]]).unwrap();
        let (r0, r1) = ray_oracle(&lat);
        assert!((lat.r0 - r0).abs() < 1e-6);
        assert!((lat.r1 - r1).abs() < 1e-6);
        assert!(lat.r0 < lat.r1);
    }

    #[test]
    fn reduction_lands_in_zone() {
        let lat = Lattice::cubic(2);
        let k = lat.reduce(&[5.0, -4.0]);
        assert!((k[0] - (5.0 - 2.0 * PI)).abs() < 1e-12 && (k[1] - (-4.0 + 2.0 * PI)).abs() < 1e-12);
    }
}
