//! Periodic cell problems for Λ (n×m) and Λ̃ (n×n) and the effective
//! coefficients derived from them.

use faer::Side;
use rayon::prelude::*;

use super::fiber::{toeplitz, FiberSystem};
use super::field::{synthesize, Field, Modes};
use crate::error::{HomogError, Result};
use crate::linalg::*;

#[derive(Clone, Debug)]
pub struct CellOptions {
    /// Systems up to this size are solved by dense Cholesky, larger ones by
    /// preconditioned conjugate gradients.
    pub dense_limit: usize,
    pub cg_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions { dense_limit: 4096, cg_tol: 1e-13, cg_max_iter: 5000 }
    }
}

#[derive(Clone, Debug)]
pub struct CellSolution {
    pub modes: Modes,
    pub n: usize,
    pub m: usize,
    /// Mode coefficients of Λ (zero mean).
    pub lam_hat: Vec<CMat>,
    /// Mode coefficients of Λ̃ (zero mean).
    pub lamt_hat: Vec<CMat>,
    /// Constant shifts making Λ and Λ̃ orthogonal to constants in the
    /// weighted product with (ff*)⁻¹.
    pub lam_g0: CMat,
    pub lamt_g0: CMat,
    /// Effective matrix g⁰ = ⟨g(bΛ + 1)⟩.
    pub g0: CMat,
    pub gbar: CMat,
    pub gunder: CMat,
    pub v: CMat,
    pub w: CMat,
    pub qbar: CMat,
    pub abar: Vec<CMat>,
    /// Coarse mean of (ff*)⁻¹ and f0 = that mean^{-1/2}.
    pub gg_mean: CMat,
    pub f0: CMat,
    pub residual: f64,
}

/// Fine-grid fields built from a cell solution.
#[derive(Clone, Debug)]
pub struct CellFields {
    pub lam_g: Field,
    pub lamt_g: Field,
    pub blam: Field,
    pub blamt: Field,
    pub dlam: Vec<Field>,
    pub dlamt: Vec<Field>,
    pub gtilde: Field,
}

fn nonzero_indices(modes: &Modes, n: usize) -> Vec<usize> {
    let z = modes.zero_index();
    (0..modes.len()).filter(|&l| l != z).flat_map(|l| (0..n).map(move |a| l * n + a)).collect()
}

fn stack(blocks: &[CMat], skip: usize) -> CMat {
    let r = blocks[0].nrows();
    let c = blocks[0].ncols();
    let kept: Vec<&CMat> = blocks.iter().enumerate().filter(|(l, _)| *l != skip).map(|(_, b)| b).collect();
    CMat::from_fn(kept.len() * r, c, |i, j| kept[i / r][(i % r, j)])
}

fn unstack(sol: &CMat, nm: usize, skip: usize, r: usize) -> Vec<CMat> {
    let c = sol.ncols();
    let mut out = Vec::with_capacity(nm);
    let mut k = 0;
    for l in 0..nm {
        if l == skip {
            out.push(zeros(r, c));
        } else {
            out.push(CMat::from_fn(r, c, |i, j| sol[(k * r + i, j)]));
            k += 1;
        }
    }
    out
}

impl CellSolution {
    pub fn solve(fs: &FiberSystem, opts: &CellOptions) -> Result<CellSolution> {
        let p = &fs.problem;
        let (n, m, d) = (p.n, p.m, p.d());
        let modes = &fs.modes;
        let nm = modes.len();
        let z = modes.zero_index();
        let bl: Vec<CMat> = fs.xi.iter().map(|x| p.b_symbol(x)).collect();
        let rhs_lam: Vec<CMat> = (0..nm).map(|l| rscaled(&(bl[l].adjoint() * fs.g_spec.at(&modes.list[l])), -1.0)).collect();
        let rhs_lamt: Vec<CMat> = (0..nm)
            .map(|l| {
                let mut acc = zeros(n, n);
                for j in 0..d {
                    acc = &acc + &rscaled(fs.astar_spec[j].at(&modes.list[l]), -fs.xi[l][j]);
                }
                acc
            })
            .collect();
        let rhs = faer::concat![[stack(&rhs_lam, z), stack(&rhs_lamt, z)]];
        let size = (nm - 1) * n;
        let (sol, residual) = if size <= opts.dense_limit {
            let bl_adj: Vec<CMat> = bl.iter().map(adj).collect();
            let x00 = herm_part(&toeplitz(modes, &fs.g_spec, &bl_adj, &bl));
            let idx = nonzero_indices(modes, n);
            let a = CMat::from_fn(size, size, |i, j| x00[(idx[i], idx[j])]);
            let chol = a
                .cholesky(Side::Lower)
                .map_err(|_| HomogError::IllConditioned("cell operator is not positive definite".into()))?;
            let sol = faer::prelude::SpSolver::solve(&chol, &rhs);
            let res = (&(&a * &sol) - &rhs).norm_l2() / rhs.norm_l2().max(1e-300);
            (sol, res)
        } else {
            cg_solve(fs, &bl, &rhs, opts)?
        };
        let lam_hat = unstack(&cols(&sol, 0, m), nm, z, n);
        let lamt_hat = unstack(&cols(&sol, m, n), nm, z, n);
        Ok(Self::assemble(fs, lam_hat, lamt_hat, residual))
    }

    fn assemble(fs: &FiberSystem, lam_hat: Vec<CMat>, lamt_hat: Vec<CMat>, residual: f64) -> CellSolution {
        let p = &fs.problem;
        let m = p.m;
        let modes = &fs.modes;
        let gg_mean = herm_part(&fs.gg_coarse.mean());
        let gg_inv = inv(&gg_mean);
        let shift = |hat: &[CMat]| {
            let field = synthesize(modes, hat, &fs.coarse);
            rscaled(&(&gg_inv * fs.gg_coarse.mul(&field).mean()), -1.0)
        };
        let lam_g0 = shift(&lam_hat);
        let lamt_g0 = shift(&lamt_hat);
        let f0 = inv_sqrt_hpd(&gg_mean);
        let blam = synthesize(modes, &b_apply(fs, &lam_hat), &fs.fine);
        let blamt = synthesize(modes, &b_apply(fs, &lamt_hat), &fs.fine);
        let gtilde = fs.g.mul(&blam.map(|v| v + &eye(m)));
        let g0 = herm_part(&gtilde.mean());
        let gbar = herm_part(&fs.g.mean());
        let gunder = herm_part(&inv(&fs.g.map(inv).mean()));
        let gb = fs.g.mul(&blamt);
        let v = blam.adjoint().mul(&gb).mean();
        let w = herm_part(&blamt.adjoint().mul(&gb).mean());
        let qbar = herm_part(&fs.qdens.mean());
        let abar = fs.a.iter().map(|a| plus_adj(&a.mean())).collect();
        CellSolution {
            modes: modes.clone(),
            n: p.n,
            m,
            lam_hat,
            lamt_hat,
            lam_g0,
            lamt_g0,
            g0,
            gbar,
            gunder,
            v,
            w,
            qbar,
            abar,
            gg_mean,
            f0,
            residual,
        }
    }

    /// Coefficients of Λ_G and Λ̃_G per mode (the zero mode carries the shift).
    pub fn lam_g_hat(&self) -> (Vec<CMat>, Vec<CMat>) {
        let z = self.modes.zero_index();
        let mut a = self.lam_hat.clone();
        let mut b = self.lamt_hat.clone();
        a[z] = self.lam_g0.clone();
        b[z] = self.lamt_g0.clone();
        (a, b)
    }

    pub fn fields(&self, fs: &FiberSystem) -> CellFields {
        let d = fs.problem.d();
        let m = fs.problem.m;
        let (lg, ltg) = self.lam_g_hat();
        let lam_g = synthesize(&self.modes, &lg, &fs.fine);
        let lamt_g = synthesize(&self.modes, &ltg, &fs.fine);
        let blam = synthesize(&self.modes, &b_apply(fs, &self.lam_hat), &fs.fine);
        let blamt = synthesize(&self.modes, &b_apply(fs, &self.lamt_hat), &fs.fine);
        let deriv = |hat: &[CMat], j: usize| {
            let c: Vec<CMat> = hat.iter().zip(&fs.xi).map(|(h, x)| rscaled(h, x[j])).collect();
            synthesize(&self.modes, &c, &fs.fine)
        };
        let dlam = (0..d).map(|j| deriv(&self.lam_hat, j)).collect();
        let dlamt = (0..d).map(|j| deriv(&self.lamt_hat, j)).collect();
        let gtilde = fs.g.mul(&blam.map(|v| v + &eye(m)));
        CellFields { lam_g, lamt_g, blam, blamt, dlam, dlamt, gtilde }
    }
}

fn b_apply(fs: &FiberSystem, hat: &[CMat]) -> Vec<CMat> {
    hat.iter().zip(&fs.xi).map(|(h, x)| fs.problem.b_symbol(x) * h).collect()
}

/// Column-by-column preconditioned CG with FFT-based operator application.
fn cg_solve(fs: &FiberSystem, bl: &[CMat], rhs: &CMat, opts: &CellOptions) -> Result<(CMat, f64)> {
    let n = fs.problem.n;
    let modes = &fs.modes;
    let nm = modes.len();
    let z = modes.zero_index();
    let g0 = fs.g_spec.at(&vec![0; modes.d]).clone();
    let precond: Vec<Option<CMat>> =
        (0..nm).map(|l| if l == z { None } else { Some(inv(&herm_part(&(bl[l].adjoint() * &g0 * &bl[l])))) }).collect();
    let to_blocks = |v: &CMat| unstack(v, nm, z, n);
    let from_blocks = |b: &[CMat]| stack(b, z);
    let apply = |v: &CMat| -> CMat {
        let u = to_blocks(v);
        let bu: Vec<CMat> = u.iter().zip(bl).map(|(u, b)| b * u).collect();
        let field = synthesize(modes, &bu, &fs.fine);
        let spec = fs.g.mul(&field).spectrum();
        let out: Vec<CMat> = (0..nm).map(|l| bl[l].adjoint() * spec.at(&modes.list[l])).collect();
        from_blocks(&out)
    };
    let prec = |v: &CMat| -> CMat {
        let u = to_blocks(v);
        let out: Vec<CMat> = u.iter().zip(&precond).map(|(u, p)| p.as_ref().map(|p| p * u).unwrap_or_else(|| u.clone())).collect();
        from_blocks(&out)
    };
    let dot = |a: &CMat, b: &CMat| -> c64 { (a.adjoint() * b)[(0, 0)] };
    let columns: Vec<Result<(CMat, f64)>> = (0..rhs.ncols())
        .into_par_iter()
        .map(|c| {
            let b = cols(rhs, c, 1);
            let bnorm = b.norm_l2().max(1e-300);
            let mut x = zeros(b.nrows(), 1);
            let mut r = b.clone();
            let mut zv = prec(&r);
            let mut p = zv.clone();
            let mut rz = dot(&r, &zv);
            for _ in 0..opts.cg_max_iter {
                if r.norm_l2() <= opts.cg_tol * bnorm {
                    return Ok((x, r.norm_l2() / bnorm));
                }
                let ap = apply(&p);
                let alpha = rz / dot(&p, &ap);
                x = &x + &scaled(&p, alpha);
                r = &r - &scaled(&ap, alpha);
                zv = prec(&r);
                let rz_new = dot(&r, &zv);
                p = &zv + &scaled(&p, rz_new / rz);
                rz = rz_new;
            }
            let rel = r.norm_l2() / bnorm;
            if rel < 1e-8 {
                Ok((x, rel))
            } else {
                Err(HomogError::IllConditioned(format!("cell CG stopped at relative residual {rel:e}")))
            }
        })
        .collect();
    let mut sol = zeros(rhs.nrows(), rhs.ncols());
    let mut worst = 0.0f64;
    for (c, res) in columns.into_iter().enumerate() {
        let (x, r) = res?;
        worst = worst.max(r);
        for i in 0..x.nrows() {
            sol[(i, c)] = x[(i, 0)];
        }
    }
    Ok((sol, worst))
}
