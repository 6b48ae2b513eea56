//! Galerkin realization of the fiber operators on the trigonometric modes
//! {−N..N}^d. The vector index of (mode l, component α) is `l·n + α`.

use rayon::prelude::*;

use super::constants::DoConstants;
use super::field::{Field, Grid, Modes, Spectrum};
use super::problem::PeriodicProblem;
use crate::abstract_engine::{BorderedFamily, GramForm, Kernel, ThresholdParams};
use crate::error::Result;
use crate::linalg::*;

/// Block Toeplitz matrix with blocks `left[l] · ĉ(l − l') · right[l']`.
pub fn toeplitz(modes: &Modes, spec: &Spectrum, left: &[CMat], right: &[CMat]) -> CMat {
    let nm = modes.len();
    let r = left[0].nrows();
    let c = right[0].ncols();
    let d = modes.d;
    let blocks: Vec<Vec<c64>> = (0..nm)
        .into_par_iter()
        .map(|lp| {
            let mut col = vec![ZERO; nm * r * c];
            let rp = &right[lp];
            let mut diff = [0i64; 3];
            for l in 0..nm {
                for j in 0..d {
                    diff[j] = modes.list[l][j] - modes.list[lp][j];
                }
                let coef = &spec.vals[spec.grid.wrap(&diff[..d])];
                let tmp = coef * rp;
                let blk = &left[l] * &tmp;
                for b in 0..c {
                    for a in 0..r {
                        col[b * nm * r + l * r + a] = blk[(a, b)];
                    }
                }
            }
            col
        })
        .collect();
    let mut out = zeros(nm * r, nm * c);
    for (lp, col) in blocks.iter().enumerate() {
        for b in 0..c {
            for i in 0..nm * r {
                out[(i, lp * c + b)] = col[b * nm * r + i];
            }
        }
    }
    out
}

/// B(k, ε) = A0 + Σ k_j A1_j + Σ_{i≤j} k_i k_j A2_ij + ε(Y0 + Σ k_j Y1_j) + ε² P.
#[derive(Clone, Debug)]
pub struct FiberExpansion {
    a0: CMat,
    a1: Vec<CMat>,
    a2: Vec<(usize, usize, CMat)>,
    y0: CMat,
    y1: Vec<CMat>,
    pot: CMat,
}

impl FiberExpansion {
    pub fn matrix(&self, k: &[f64], eps: f64) -> CMat {
        let mut b = &self.a0 + &rscaled(&self.y0, eps);
        for (j, &kj) in k.iter().enumerate() {
            b = &b + &rscaled(&(&self.a1[j] + &rscaled(&self.y1[j], eps)), kj);
        }
        for (i, j, blk) in &self.a2 {
            b = &b + &rscaled(blk, k[*i] * k[*j]);
        }
        herm_part(&(&b + &rscaled(&self.pot, eps * eps)))
    }
}

/// Block diagonal matrix with the given blocks.
pub fn block_diag(blocks: &[CMat]) -> CMat {
    let r = blocks[0].nrows();
    let c = blocks[0].ncols();
    let mut out = zeros(blocks.len() * r, blocks.len() * c);
    for (k, bl) in blocks.iter().enumerate() {
        for j in 0..c {
            for i in 0..r {
                out[(k * r + i, k * c + j)] = bl[(i, j)];
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct FiberSystem {
    pub problem: PeriodicProblem,
    pub modes: Modes,
    pub fine: Grid,
    pub coarse: Grid,
    /// ξ_l for every mode.
    pub xi: Vec<Vec<f64>>,
    pub g: Field,
    pub f: Field,
    pub a: Vec<Field>,
    pub qdens: Field,
    pub g_spec: Spectrum,
    pub astar_spec: Vec<Spectrum>,
    pub q_spec: Spectrum,
    /// (f f*)⁻¹ at the coarse points.
    pub gg_coarse: Field,
    /// Multiplication by f in the mode basis.
    pub m: CMat,
    pub constants: DoConstants,
}

impl FiberSystem {
    pub fn new(problem: &PeriodicProblem, cutoff: usize) -> Result<FiberSystem> {
        problem.validate()?;
        let d = problem.d();
        let modes = Modes::new(d, cutoff);
        let fine = modes.fine_grid();
        let coarse = modes.coarse_grid();
        let xi = modes.list.iter().map(|l| problem.lattice.dual_point(l)).collect();
        let g = problem.g.sample(&fine);
        let f = problem.f.sample(&fine);
        let a: Vec<Field> = problem.a.iter().map(|c| c.sample(&fine)).collect();
        let qdens = problem.qdens.sample(&fine);
        let g_spec = g.spectrum();
        let astar_spec = a.iter().map(|f| f.adjoint().spectrum()).collect();
        let q_spec = qdens.spectrum();
        let fc = problem.f.sample(&coarse);
        let gg_coarse = fc.map(|v| herm_part(&inv(&(v * v.adjoint()))));
        let n = problem.n;
        let id: Vec<CMat> = vec![eye(n); modes.len()];
        let m = toeplitz(&modes, &fc.spectrum(), &id, &id);
        let constants = DoConstants::compute(problem, &fine);
        Ok(FiberSystem { problem: problem.clone(), modes, fine, coarse, xi, g, f, a, qdens, g_spec, astar_spec, q_spec, gg_coarse, m, constants })
    }

    pub fn dim(&self) -> usize {
        self.modes.len() * self.problem.n
    }

    pub fn n(&self) -> usize {
        self.problem.n
    }

    fn shifted(&self, k0: &[f64]) -> Vec<Vec<f64>> {
        self.xi.iter().map(|x| x.iter().zip(k0).map(|(a, b)| a + b).collect()).collect()
    }

    /// Gram blocks of the hatted fiber family at base point k0 and
    /// direction θ, i.e. B̂(k0 + tθ, ε) = `b_matrix(t, ε)`.
    pub fn hat_gram(&self, k0: &[f64], theta: &[f64]) -> GramForm {
        let p = &self.problem;
        let n = p.n;
        let nm = self.modes.len();
        let pts = self.shifted(k0);
        let bl: Vec<CMat> = pts.iter().map(|x| p.b_symbol(x)).collect();
        let bl_adj: Vec<CMat> = bl.iter().map(adj).collect();
        let bth = p.b_symbol(theta);
        let bth_r = vec![bth.clone(); nm];
        let bth_l = vec![adj(&bth); nm];
        let id = vec![eye(n); nm];
        let x00 = toeplitz(&self.modes, &self.g_spec, &bl_adj, &bl);
        let x01 = toeplitz(&self.modes, &self.g_spec, &bl_adj, &bth_r);
        let x11 = toeplitz(&self.modes, &self.g_spec, &bth_l, &bth_r);
        let mut y02 = zeros(nm * n, nm * n);
        let mut y12 = zeros(nm * n, nm * n);
        for (j, spec) in self.astar_spec.iter().enumerate() {
            let lw: Vec<CMat> = pts.iter().map(|x| rscaled(&eye(n), x[j])).collect();
            y02 = &y02 + &toeplitz(&self.modes, spec, &lw, &id);
            if theta[j] != 0.0 {
                y12 = &y12 + &rscaled(&toeplitz(&self.modes, spec, &id, &id), theta[j]);
            }
        }
        let q = herm_part(&toeplitz(&self.modes, &self.q_spec, &id, &id));
        GramForm { x00: herm_part(&x00), x01, x11: herm_part(&x11), y02, y12, q, q0: eye(nm * n), lambda: p.lambda }
    }

    /// Hatted fiber matrix B̂(k, ε).
    pub fn hat_matrix(&self, k: &[f64], eps: f64) -> CMat {
        let zero = vec![0.0; self.problem.d()];
        self.hat_gram(k, &zero).b_matrix(0.0, eps)
    }

    /// Fiber matrix B(k, ε) = M* B̂(k, ε) M.
    pub fn fiber_matrix(&self, k: &[f64], eps: f64) -> CMat {
        herm_part(&(self.m.adjoint() * self.hat_matrix(k, eps) * &self.m))
    }

    /// Coefficients of k ↦ B(k, ε) as a polynomial, for repeated evaluation.
    pub fn expansion(&self) -> FiberExpansion {
        let d = self.problem.d();
        let conj = |a: &CMat| herm_part(&(self.m.adjoint() * a * &self.m));
        let zero = vec![0.0; d];
        let unit = |j: usize| (0..d).map(|i| if i == j { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let base = self.hat_gram(&zero, &zero);
        let dirs: Vec<GramForm> = (0..d).map(|j| self.hat_gram(&zero, &unit(j))).collect();
        let mut quad = Vec::new();
        for i in 0..d {
            for j in i..d {
                let blk = if i == j {
                    dirs[i].x11.clone()
                } else {
                    let both: Vec<f64> = (0..d).map(|c| if c == i || c == j { 1.0 } else { 0.0 }).collect();
                    let sum = self.hat_gram(&zero, &both).x11;
                    &(&sum - &dirs[i].x11) - &dirs[j].x11
                };
                quad.push((i, j, conj(&blk)));
            }
        }
        FiberExpansion {
            a0: conj(&base.x00),
            a1: dirs.iter().map(|g| conj(&plus_adj(&g.x01))).collect(),
            a2: quad,
            y0: conj(&plus_adj(&base.y02)),
            y1: dirs.iter().map(|g| conj(&plus_adj(&g.y12))).collect(),
            pot: conj(&(&base.q + &rscaled(&base.q0, base.lambda))),
        }
    }

    /// Smallest λmin(B(k, ε)) / (|k|² + ε²) over the sampled fibers.
    pub fn cstar_fiber(&self, ks: &[Vec<f64>], eps: &[f64]) -> f64 {
        let ex = self.expansion();
        let pts: Vec<(&Vec<f64>, f64)> = ks.iter().flat_map(|k| eps.iter().map(move |&e| (k, e))).collect();
        pts.par_iter()
            .map(|(k, e)| min_eig(&ex.matrix(k, *e)) / (k.iter().map(|x| x * x).sum::<f64>() + e * e))
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// Kernel of X̂0 at k = 0: the constant modes, with the gap bounded from
    /// the coefficient bounds.
    pub fn hat_kernel(&self) -> Kernel {
        let n = self.n();
        let z = self.modes.zero_index();
        let phi = CMat::from_fn(self.dim(), n, |i, j| if i == z * n + j { ONE } else { ZERO });
        let c = &self.constants;
        let r0 = self.problem.lattice.r0;
        let d0 = c.alpha0 / c.g_inv_sup * 4.0 * r0 * r0;
        let kmax = self.xi.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>()).fold(0.0, f64::max);
        Kernel { phi, n, d0, top: c.alpha1 * c.g_sup * kmax }
    }

    pub fn threshold_params(&self) -> ThresholdParams {
        let c = &self.constants;
        ThresholdParams {
            kappa: c.kappa,
            constants: Some(c.form_constants()),
            delta: Some(c.delta),
            tau0: Some(c.tau0),
            ..Default::default()
        }
    }

    /// Bordered finite family along direction θ at k0 = 0.
    pub fn bordered(&self, theta: &[f64]) -> BorderedFamily {
        let zero = vec![0.0; self.problem.d()];
        BorderedFamily { base: self.hat_gram(&zero, theta), m: self.m.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expansion_matches_assembly() {
        let fs = FiberSystem::new(&PeriodicProblem::random_smooth(2, 2, 3, 3, 5), 3).unwrap();
        let ex = fs.expansion();
        for (k, eps) in [(vec![0.3, -1.2], 0.4), (vec![2.0, 0.7], 1.0), (vec![0.0, 0.0], 0.1)] {
            let d = &ex.matrix(&k, eps) - &fs.fiber_matrix(&k, eps);
            assert!(d.norm_l2() < 1e-10 * (1.0 + fs.fiber_matrix(&k, eps).norm_l2()));
        }
    }

    /// Dense oracle: Galerkin matrix of b(D+k)* g b(D+k) by quadrature of
    /// the basis functions on the fine grid.
    #[test]
    fn hat_matrix_matches_quadrature_oracle() {
        let p = PeriodicProblem::random_smooth(1, 1, 2, 2, 3);
        let fs = FiberSystem::new(&p, 3).unwrap();
        let k = [0.4];
        let eps = 0.3;
        let bh = fs.hat_matrix(&k, eps);
        let nm = fs.modes.len();
        let grid = &fs.fine;
        let mut oracle = zeros(nm, nm);
        for (i, li) in fs.modes.list.iter().enumerate() {
            for (j, lj) in fs.modes.list.iter().enumerate() {
                let mut acc = ZERO;
                for pt in 0..grid.len() {
                    let y = grid.coord(pt)[0];
                    let ph = 2.0 * std::f64::consts::PI * (lj[0] - li[0]) as f64 * y;
                    let e = cplx(ph.cos(), ph.sin());
                    let bi = p.b_symbol(&[fs.xi[i][0] + k[0]]);
                    let bj = p.b_symbol(&[fs.xi[j][0] + k[0]]);
                    let g = &fs.g.vals[pt];
                    let a = fs.a[0].vals[pt][(0, 0)];
                    let q = fs.qdens.vals[pt][(0, 0)];
                    let main = (bi.adjoint() * g * &bj)[(0, 0)];
                    let ki = fs.xi[i][0] + k[0];
                    let kj = fs.xi[j][0] + k[0];
                    let lower = cr(ki) * a.conj() + a * cr(kj);
                    acc += e * (main + cr(eps) * lower + cr(eps * eps) * (q + cr(p.lambda)));
                }
                oracle[(i, j)] = acc * cr(1.0 / grid.len() as f64);
            }
        }
        assert!((&bh - &oracle).norm_l2() < 1e-10 * oracle.norm_l2());
    }

    #[test]
    fn multiplication_matrix_is_collocation() {
        let p = PeriodicProblem::oscillatory_1d();
        let fs = FiberSystem::new(&p, 4).unwrap();
        let mmm = &fs.m * fs.m.adjoint();
        let g = toeplitz(&fs.modes, &fs.gg_coarse.spectrum(), &vec![eye(1); 9], &vec![eye(1); 9]);
        assert!((&(&mmm * &g) - &eye(9)).norm_l2() < 1e-10);
    }

    #[test]
    fn kernel_at_zero() {
        let p = PeriodicProblem::random_smooth(2, 1, 2, 2, 7);
        let fs = FiberSystem::new(&p, 2).unwrap();
        let gram = fs.hat_gram(&[0.0, 0.0], &[1.0, 0.0]);
        let ker = fs.hat_kernel();
        assert!((&gram.x00 * &ker.phi).norm_l2() < 1e-12);
        let vals = eigvalsh(&gram.x00);
        assert!(vals[1] >= ker.d0 * (1.0 - 1e-9));
        assert!(*vals.last().unwrap() <= ker.top * (1.0 + 1e-9));
    }
}
