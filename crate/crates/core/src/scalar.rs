//! Periodic magnetic Schrödinger operator with a metric,
//! (D − A)* g (D − A) + 𝒱 + v-terms + λ, written in factorized form, with
//! its effective data computed from real scalar cell problems.

use std::f64::consts::PI;

use faer::Side;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};
use crate::evolution::EvolutionSetup;
use crate::lattice::Lattice;
use crate::linalg::*;
use crate::periodic::cell::CellSolution;
use crate::periodic::field::{analyze, synthesize, Field, Grid, Modes};
use crate::periodic::ng::NgCoefficients;
use crate::periodic::problem::{Coef, PeriodicProblem};

#[derive(Clone, Debug)]
pub struct ScalarInput {
    pub name: String,
    pub lattice: Lattice,
    /// Real symmetric positive definite metric, d×d.
    pub g: Coef,
    /// Magnetic potential, d×1 and real.
    pub amag: Coef,
    /// Real potential with zero mean.
    pub v: Coef,
    /// Real potential 𝒱.
    pub vpot: Coef,
    pub lambda: f64,
    /// Grid side for sampling the inputs; rounded up to an odd number.
    pub resolution: usize,
}

/// Harmonic amplitudes of the `scalar_schrodinger` preset (d = 2).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ScalarAmplitudes {
    pub g: f64,
    pub a: f64,
    pub v: f64,
    pub vpot: f64,
    /// None picks λ from the positivity constants.
    pub lambda: Option<f64>,
}

impl Default for ScalarAmplitudes {
    fn default() -> Self {
        ScalarAmplitudes { g: 0.3, a: 0.4, v: 0.8, vpot: 0.5, lambda: None }
    }
}

fn one(v: f64) -> CMat {
    CMat::from_fn(1, 1, |_, _| cr(v))
}

impl ScalarInput {
    pub fn preset(amp: &ScalarAmplitudes) -> Result<ScalarInput> {
        let (ag, aa, av, ap) = (amp.g, amp.a, amp.v, amp.vpot);
        let c = |t: f64| (2.0 * PI * t).cos();
        let s = |t: f64| (2.0 * PI * t).sin();
        let g = Coef::func(2, 2, move |y| {
            let off = 0.5 * ag * s(y[0] + y[1]);
            let mut m = eye(2);
            m[(0, 0)] += cr(ag * c(y[0]));
            m[(1, 1)] += cr(ag * c(y[1]));
            m[(0, 1)] = cr(off);
            m[(1, 0)] = cr(off);
            m
        });
        let amag = Coef::func(2, 1, move |y| {
            let mut m = zeros(2, 1);
            m[(0, 0)] = cr(aa * (0.5 + s(y[1])));
            m[(1, 0)] = cr(aa * c(y[0]));
            m
        });
        let v = Coef::func(1, 1, move |y| one(av * (c(y[0]) + 0.6 * s(y[0] + y[1]))));
        let vpot = Coef::func(1, 1, move |y| one(ap * c(y[1])));
        let mut inp = ScalarInput {
            name: "scalar_schrodinger".into(),
            lattice: Lattice::cubic(2),
            g,
            amag,
            v,
            vpot,
            lambda: 0.0,
            resolution: 17,
        };
        inp.lambda = match amp.lambda {
            Some(l) => l,
            None => build_scalar_problem(&inp)?.safe_lambda(),
        };
        Ok(inp)
    }

    fn grid(&self) -> (Grid, Modes) {
        let r = self.resolution | 1;
        (Grid::new(vec![r; self.lattice.d]), Modes::new(self.lattice.d, (r - 1) / 2))
    }

    /// ζ_j = −∂_jΦ with ΔΦ = v, on the input grid.
    pub fn zeta(&self) -> Result<Vec<Field>> {
        let d = self.lattice.d;
        let (grid, modes) = self.grid();
        let vf = self.v.sample(&grid);
        let mean = vf.mean()[(0, 0)];
        if mean.norm() > 1e-12 * (1.0 + vf.sup_norm()) {
            return Err(HomogError::MeanNotZero(mean.re));
        }
        let vh = analyze(&vf, &modes);
        Ok((0..d)
            .map(|j| {
                let c: Vec<CMat> = modes
                    .list
                    .iter()
                    .zip(&vh)
                    .map(|(l, vl)| {
                        let xi = self.lattice.dual_point(l);
                        let n2: f64 = xi.iter().map(|x| x * x).sum();
                        if n2 == 0.0 {
                            zeros(1, 1)
                        } else {
                            scaled(vl, cplx(0.0, xi[j] / n2))
                        }
                    })
                    .collect();
                synthesize(&modes, &c, &grid).map(|z| one(z[(0, 0)].re))
            })
            .collect())
    }
}

/// The factorized problem: n = 1, m = d, b(D) = D, f = 1,
/// a_j = −η_j + iζ_j with η = gA, and 𝒬 = 𝒱 + ⟨gA, A⟩.
pub fn build_scalar_problem(inp: &ScalarInput) -> Result<PeriodicProblem> {
    let d = inp.lattice.d;
    let (grid, _) = inp.grid();
    let zeta = inp.zeta()?;
    let g = inp.g.sample(&grid);
    let am = inp.amag.sample(&grid);
    let eta = g.mul(&am);
    let a = (0..d)
        .map(|j| {
            let vals = (0..grid.len()).map(|p| CMat::from_fn(1, 1, |_, _| cplx(-eta.vals[p][(j, 0)].re, zeta[j].vals[p][(0, 0)].re))).collect();
            Coef::Samples(Field { grid: grid.clone(), rows: 1, cols: 1, vals })
        })
        .collect();
    let vp = inp.vpot.sample(&grid);
    let qvals = (0..grid.len()).map(|p| &vp.vals[p] + &(am.vals[p].adjoint() * &eta.vals[p])).map(|q| one(q[(0, 0)].re)).collect();
    let b = (0..d).map(|j| CMat::from_fn(d, 1, |i, _| if i == j { ONE } else { ZERO })).collect();
    Ok(PeriodicProblem {
        name: inp.name.clone(),
        lattice: inp.lattice.clone(),
        n: 1,
        m: d,
        b,
        g: inp.g.clone(),
        f: Coef::constant(eye(1)),
        a,
        qdens: Coef::Samples(Field { grid, rows: 1, cols: 1, vals: qvals }),
        lambda: inp.lambda,
    })
}

/// Real fields on the quadrature grid.
#[derive(Clone, Debug)]
pub struct ScalarFields {
    pub grid: Grid,
    /// g_ab at each point, row-major.
    pub g: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub amag: Vec<Vec<f64>>,
    pub v: Vec<f64>,
    pub vpot: Vec<f64>,
    pub psi: Vec<Vec<f64>>,
    /// dpsi[j][a] = ∂_a ψ_j.
    pub dpsi: Vec<Vec<Vec<f64>>>,
    pub lt1: Vec<f64>,
    pub dlt1: Vec<Vec<f64>>,
    pub lt2: Vec<f64>,
    pub dlt2: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct ScalarEffective {
    pub d: usize,
    pub modes: Modes,
    /// Mode coefficients of ψ_j, Λ̃1 and Λ̃2.
    pub psi_hat: Vec<Vec<c64>>,
    pub lt1_hat: Vec<c64>,
    pub lt2_hat: Vec<c64>,
    pub g0: Vec<Vec<f64>>,
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub w: f64,
    pub a0: Vec<f64>,
    pub v0: f64,
    pub lambda: f64,
    /// Largest imaginary part met when synthesizing the real fields.
    pub max_imag: f64,
    pub fields: ScalarFields,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalarNCoefficients {
    /// Symmetric part of the second-order coefficients.
    pub n12: Vec<Vec<f64>>,
    /// Largest |N12_kl − N12_lk| of the unsymmetrized cell means.
    pub n12_asymmetry: f64,
    pub n21: Vec<f64>,
    pub n22: f64,
}

fn mean(v: impl Iterator<Item = f64>, len: usize) -> f64 {
    v.sum::<f64>() / len as f64
}

/// Scalar cell problems −div g∇u = rhs solved on the modes {−N..N}^d,
/// and the effective data built from them.
pub fn scalar_effective(inp: &ScalarInput, cutoff: usize) -> Result<ScalarEffective> {
    let d = inp.lattice.d;
    let modes = Modes::new(d, cutoff);
    let nm = modes.len();
    let z = modes.zero_index();
    let xi: Vec<Vec<f64>> = modes.list.iter().map(|l| inp.lattice.dual_point(l)).collect();
    let quad = Grid::new(vec![3 * modes.side(); d]);
    let gspec = inp.g.sample(&modes.fine_grid()).spectrum();
    let am_q = inp.amag.sample(&quad);
    let g_q = inp.g.sample(&quad);
    let eta_q = g_q.mul(&am_q);
    let eta_spec = eta_q.spectrum();
    let v_q = inp.v.sample(&quad);
    let v_spec = v_q.spectrum();

    let nz: Vec<usize> = (0..nm).filter(|&l| l != z).collect();
    let size = nz.len();
    let mut kmat = zeros(size, size);
    for (i, &l) in nz.iter().enumerate() {
        for (j, &lp) in nz.iter().enumerate() {
            let diff: Vec<i64> = modes.list[l].iter().zip(&modes.list[lp]).map(|(a, b)| a - b).collect();
            let gh = gspec.at(&diff);
            let mut acc = ZERO;
            for a in 0..d {
                for b in 0..d {
                    acc += cr(xi[l][a] * xi[lp][b]) * gh[(a, b)];
                }
            }
            kmat[(i, j)] = acc;
        }
    }
    let mut rhs = zeros(size, d + 2);
    for (i, &l) in nz.iter().enumerate() {
        let q = &modes.list[l];
        let gh = gspec.at(q);
        let eh = eta_spec.at(q);
        for j in 0..d {
            let mut acc = ZERO;
            for a in 0..d {
                acc += cplx(0.0, xi[l][a]) * gh[(a, j)];
            }
            rhs[(i, j)] = acc;
        }
        rhs[(i, d)] = -v_spec.at(q)[(0, 0)];
        let mut acc = ZERO;
        for a in 0..d {
            acc -= cplx(0.0, xi[l][a]) * eh[(a, 0)];
        }
        rhs[(i, d + 1)] = acc;
    }
    let chol = herm_part(&kmat)
        .cholesky(Side::Lower)
        .map_err(|_| HomogError::IllConditioned("scalar cell operator is not positive definite".into()))?;
    let sol = faer::prelude::SpSolver::solve(&chol, &rhs);
    let hat = |c: usize| -> Vec<c64> {
        let mut out = vec![ZERO; nm];
        for (i, &l) in nz.iter().enumerate() {
            out[l] = sol[(i, c)];
        }
        out
    };
    let psi_hat: Vec<Vec<c64>> = (0..d).map(hat).collect();
    let lt1_hat = hat(d);
    let lt2_hat = hat(d + 1);

    let mut max_imag: f64 = 0.0;
    let mut real = |h: &[c64], deriv: Option<usize>| -> Vec<f64> {
        let c: Vec<CMat> = h
            .iter()
            .zip(&xi)
            .map(|(v, x)| {
                let f = match deriv {
                    Some(a) => cplx(0.0, x[a]),
                    None => ONE,
                };
                CMat::from_fn(1, 1, |_, _| f * *v)
            })
            .collect();
        let f = synthesize(&modes, &c, &quad);
        f.vals
            .iter()
            .map(|m| {
                max_imag = max_imag.max(m[(0, 0)].im.abs());
                m[(0, 0)].re
            })
            .collect()
    };
    let psi: Vec<Vec<f64>> = psi_hat.iter().map(|h| real(h, None)).collect();
    let dpsi: Vec<Vec<Vec<f64>>> = psi_hat.iter().map(|h| (0..d).map(|a| real(h, Some(a))).collect()).collect();
    let lt1 = real(&lt1_hat, None);
    let dlt1: Vec<Vec<f64>> = (0..d).map(|a| real(&lt1_hat, Some(a))).collect();
    let lt2 = real(&lt2_hat, None);
    let dlt2: Vec<Vec<f64>> = (0..d).map(|a| real(&lt2_hat, Some(a))).collect();
    let np = quad.len();
    let g: Vec<Vec<f64>> = g_q.vals.iter().map(|m| (0..d * d).map(|i| m[(i / d, i % d)].re).collect()).collect();
    let eta: Vec<Vec<f64>> = eta_q.vals.iter().map(|m| (0..d).map(|i| m[(i, 0)].re).collect()).collect();
    let amag: Vec<Vec<f64>> = am_q.vals.iter().map(|m| (0..d).map(|i| m[(i, 0)].re).collect()).collect();
    let v: Vec<f64> = v_q.vals.iter().map(|m| m[(0, 0)].re).collect();
    let vpot: Vec<f64> = inp.vpot.sample(&quad).vals.iter().map(|m| m[(0, 0)].re).collect();
    let fields = ScalarFields { grid: quad, g, eta, amag, v, vpot, psi, dpsi, lt1, dlt1, lt2, dlt2 };
    let f = &fields;
    let gab = |p: usize, a: usize, b: usize| f.g[p][a * d + b];
    // ⟨g ∇u, ∇w⟩ at point p
    let gform = |p: usize, du: &dyn Fn(usize) -> f64, dw: &dyn Fn(usize) -> f64| -> f64 {
        let mut acc = 0.0;
        for a in 0..d {
            for b in 0..d {
                acc += du(a) * gab(p, a, b) * dw(b);
            }
        }
        acc
    };

    let g0: Vec<Vec<f64>> = (0..d)
        .map(|k| (0..d).map(|l| mean((0..np).map(|p| (0..d).map(|i| gab(p, k, i) * (f.dpsi[l][i][p] + if i == l { 1.0 } else { 0.0 })).sum::<f64>()), np)).collect())
        .collect();
    let v1: Vec<f64> = (0..d).map(|j| mean((0..np).map(|p| gform(p, &|a| f.dpsi[j][a][p], &|b| f.dlt2[b][p])), np)).collect();
    let v2: Vec<f64> = (0..d).map(|j| -mean((0..np).map(|p| gform(p, &|a| f.dpsi[j][a][p], &|b| f.dlt1[b][p])), np)).collect();
    let w = mean((0..np).map(|p| gform(p, &|a| f.dlt1[a][p], &|b| f.dlt1[b][p]) + gform(p, &|a| f.dlt2[a][p], &|b| f.dlt2[b][p])), np);
    let eta_bar: Vec<f64> = (0..d).map(|j| mean((0..np).map(|p| f.eta[p][j]), np)).collect();
    let rhs_a: Vec<f64> = (0..d).map(|j| v1[j] + eta_bar[j]).collect();
    let g0m = CMat::from_fn(d, d, |i, j| cr(g0[i][j]));
    let a0c = solve(&herm_part(&g0m), &CMat::from_fn(d, 1, |i, _| cr(rhs_a[i])));
    let a0: Vec<f64> = (0..d).map(|i| a0c[(i, 0)].re).collect();
    let ga_a = mean((0..np).map(|p| (0..d).map(|j| f.eta[p][j] * f.amag[p][j]).sum::<f64>()), np);
    let a0ga0: f64 = (0..d).map(|i| (0..d).map(|j| a0[i] * g0[i][j] * a0[j]).sum::<f64>()).sum();
    let v0 = mean(f.vpot.iter().copied(), np) + ga_a - a0ga0 - w;
    Ok(ScalarEffective {
        d,
        modes,
        psi_hat,
        lt1_hat,
        lt2_hat,
        g0,
        v1,
        v2,
        w,
        a0,
        v0,
        lambda: inp.lambda,
        max_imag,
        fields,
    })
}

/// Coefficients of 𝒩 = Σ N12_kl D_k D_l + Σ N21_k D_k + N22 by cell means.
pub fn scalar_n_coefficients(eff: &ScalarEffective) -> ScalarNCoefficients {
    let d = eff.d;
    let f = &eff.fields;
    let np = f.grid.len();
    let gab = |p: usize, a: usize, b: usize| f.g[p][a * d + b];
    let gt = |p: usize, k: usize, l: usize| (0..d).map(|i| gab(p, k, i) * (f.dpsi[l][i][p] + if i == l { 1.0 } else { 0.0 })).sum::<f64>();
    let eta_dot = |p: usize, grad: &dyn Fn(usize) -> f64| (0..d).map(|a| f.eta[p][a] * grad(a)).sum::<f64>();
    let qcal = |p: usize| f.vpot[p] + (0..d).map(|j| f.eta[p][j] * f.amag[p][j]).sum::<f64>();
    let raw: Vec<Vec<f64>> = (0..d)
        .map(|k| {
            (0..d)
                .map(|l| {
                    mean(
                        (0..np).map(|p| {
                            let mut t = 2.0 * f.lt1[p] * gt(p, k, l) + f.v[p] * f.psi[k][p] * f.psi[l][p];
                            for j in 0..d {
                                t -= (gab(p, j, l) * f.psi[k][p] + gab(p, j, k) * f.psi[l][p]) * f.dlt1[j][p];
                            }
                            t
                        }),
                        np,
                    )
                })
                .collect()
        })
        .collect();
    let mut n12_asymmetry = 0.0f64;
    let n12 = (0..d)
        .map(|k| {
            (0..d)
                .map(|l| {
                    n12_asymmetry = n12_asymmetry.max((raw[k][l] - raw[l][k]).abs());
                    0.5 * (raw[k][l] + raw[l][k])
                })
                .collect()
        })
        .collect();
    let n21 = (0..d)
        .map(|k| {
            mean(
                (0..np).map(|p| {
                    let mut t = 0.0;
                    for j in 0..d {
                        t += 2.0 * gab(p, j, k) * (f.lt1[p] * f.dlt2[j][p] - f.lt2[p] * f.dlt1[j][p]);
                    }
                    t += 2.0 * f.psi[k][p] * eta_dot(p, &|a| f.dlt1[a][p]);
                    t -= 2.0 * f.lt1[p] * eta_dot(p, &|a| f.dpsi[k][a][p]);
                    t += 2.0 * f.v[p] * f.lt2[p] * f.psi[k][p];
                    t - 4.0 * f.eta[p][k] * f.lt1[p]
                }),
                np,
            )
        })
        .collect();
    let n22 = mean(
        (0..np).map(|p| {
            2.0 * f.lt2[p] * eta_dot(p, &|a| f.dlt1[a][p]) - 2.0 * f.lt1[p] * eta_dot(p, &|a| f.dlt2[a][p])
                + f.v[p] * (f.lt1[p] * f.lt1[p] + f.lt2[p] * f.lt2[p])
                + 2.0 * f.lt1[p] * (qcal(p) + eff.lambda)
        }),
        np,
    );
    ScalarNCoefficients { n12, n12_asymmetry, n21, n22 }
}

impl ScalarEffective {
    /// Symbol (ξ − εA⁰)ᵗ g⁰ (ξ − εA⁰) + ε²(𝒱⁰ + λ).
    pub fn symbol(&self, xi: &[f64], eps: f64) -> f64 {
        let d = self.d;
        let r: Vec<f64> = (0..d).map(|i| xi[i] - eps * self.a0[i]).collect();
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += r[i] * self.g0[i][j] * r[j];
            }
        }
        acc + eps * eps * (self.v0 + self.lambda)
    }
}

impl ScalarNCoefficients {
    /// ε N12(ξ) + ε² N21(ξ) + ε³ N22.
    pub fn symbol(&self, xi: &[f64], eps: f64) -> f64 {
        let d = xi.len();
        let mut q = 0.0;
        for k in 0..d {
            for l in 0..d {
                q += self.n12[k][l] * xi[k] * xi[l];
            }
        }
        let lin: f64 = (0..d).map(|k| self.n21[k] * xi[k]).sum();
        eps * q + eps * eps * lin + eps.powi(3) * self.n22
    }
}

/// Fiber corrector without smoothing in the commuted form
/// (Ψ∇ + Λ̃)E + E(Ψ∇ + Λ̃)* − s𝒩E, E = e^{−𝓑⁰ s}, on the modes of `eff`.
pub fn commuted_corrector(eff: &ScalarEffective, nc: &ScalarNCoefficients, lattice: &Lattice, k: &[f64], eps: f64, s: f64) -> CMat {
    let modes = &eff.modes;
    let nm = modes.len();
    let d = eff.d;
    let pts: Vec<Vec<f64>> = modes.list.iter().map(|l| lattice.dual_point(l).iter().zip(k).map(|(a, b)| a + b).collect()).collect();
    let e: Vec<f64> = pts.iter().map(|x| (-s * eff.symbol(x, eps)).exp()).collect();
    let mut w = zeros(nm, nm);
    for l in 0..nm {
        for lp in 0..nm {
            let diff: Vec<i64> = modes.list[l].iter().zip(&modes.list[lp]).map(|(a, b)| a - b).collect();
            if let Some(q) = modes.index_of(&diff) {
                let mut acc = ZERO;
                for j in 0..d {
                    acc += cplx(0.0, pts[lp][j]) * eff.psi_hat[j][q];
                }
                acc += cr(eps) * (eff.lt1_hat[q] + cplx(0.0, 1.0) * eff.lt2_hat[q]);
                w[(l, lp)] = acc;
            }
        }
    }
    let we = CMat::from_fn(nm, nm, |i, j| w[(i, j)] * cr(e[j]));
    let mut out = plus_adj(&we);
    for l in 0..nm {
        out[(l, l)] -= cr(s * nc.symbol(&pts[l], eps) * e[l]);
    }
    out
}

/// Largest deviations between the closed forms and the generic pipeline.
#[derive(Clone, Debug, Serialize)]
pub struct ScalarComparison {
    pub g0: f64,
    pub v: f64,
    pub w: f64,
    pub a0: f64,
    pub v0: f64,
    pub n12: f64,
    pub n21: f64,
    pub n22: f64,
    pub n11: f64,
    pub lambda_field: f64,
    pub lambda_tilde_field: f64,
}

impl ScalarComparison {
    pub fn effective_max(&self) -> f64 {
        [self.g0, self.v, self.w, self.a0, self.v0].into_iter().fold(0.0, f64::max)
    }

    pub fn n_max(&self) -> f64 {
        [self.n11, self.n12, self.n21, self.n22].into_iter().fold(0.0, f64::max)
    }
}

/// Compares against the generic cell solution and 𝒩 symbol. The generic
/// side must use the same mode cutoff as `eff`.
pub fn compare_generic(eff: &ScalarEffective, nc: &ScalarNCoefficients, cell: &CellSolution, ng: &NgCoefficients) -> ScalarComparison {
    let d = eff.d;
    let mut g0 = 0.0f64;
    let mut v = 0.0f64;
    for i in 0..d {
        for j in 0..d {
            g0 = g0.max((cell.g0[(i, j)] - cr(eff.g0[i][j])).norm());
        }
        v = v.max((cell.v[(i, 0)] - cplx(eff.v1[i], eff.v2[i])).norm());
    }
    let w = (cell.w[(0, 0)] - cr(eff.w)).norm();
    // A⁰ and 𝒱⁰ read off the generic symbol L̂(ξ, 1).
    let zero = vec![0.0; d];
    let l0 = ng.l_hat(&zero, 1.0)[(0, 0)].re;
    let c: Vec<f64> = (0..d)
        .map(|j| {
            let mut e = zero.clone();
            e[j] = 1.0;
            let lp = ng.l_hat(&e, 1.0)[(0, 0)].re;
            e[j] = -1.0;
            (lp - ng.l_hat(&e, 1.0)[(0, 0)].re) / 2.0
        })
        .collect();
    let g0m = herm_part(&ng.g0);
    let a0g = solve(&g0m, &CMat::from_fn(d, 1, |i, _| cr(-0.5 * c[i])));
    let a0g_v: Vec<f64> = (0..d).map(|i| a0g[(i, 0)].re).collect();
    let a0 = (0..d).map(|i| (a0g_v[i] - eff.a0[i]).abs()).fold(0.0, f64::max);
    let quad: f64 = (0..d).map(|i| (0..d).map(|j| a0g_v[i] * g0m[(i, j)].re * a0g_v[j]).sum::<f64>()).sum();
    let v0g = l0 - ng.lambda - quad;
    let v0 = (v0g - eff.v0).abs();

    let part = |k: &[f64], i: usize| ng.n_parts(k)[i][(0, 0)];
    let unit = |j: usize| {
        let mut e = zero.clone();
        e[j] = 1.0;
        e
    };
    let mut n11 = 0.0f64;
    let mut n12 = 0.0f64;
    let mut n21 = 0.0f64;
    for k in 0..d {
        let ek = unit(k);
        n11 = n11.max(part(&ek, 0).norm());
        n21 = n21.max((part(&ek, 2) - cr(nc.n21[k])).norm());
        for l in 0..d {
            let gen = if k == l {
                part(&ek, 1)
            } else {
                let s: Vec<f64> = ek.iter().zip(&unit(l)).map(|(a, b)| a + b).collect();
                (part(&s, 1) - part(&ek, 1) - part(&unit(l), 1)) * cr(0.5)
            };
            n12 = n12.max((gen - cr(nc.n12[k][l])).norm());
        }
    }
    let n22 = (part(&zero, 3) - cr(nc.n22)).norm();

    let mut lambda_field = 0.0f64;
    let mut lambda_tilde_field = 0.0f64;
    for l in 0..eff.modes.len() {
        for j in 0..d {
            lambda_field = lambda_field.max((cell.lam_hat[l][(0, j)] - cplx(0.0, 1.0) * eff.psi_hat[j][l]).norm());
        }
        lambda_tilde_field = lambda_tilde_field.max((cell.lamt_hat[l][(0, 0)] - (eff.lt1_hat[l] + cplx(0.0, 1.0) * eff.lt2_hat[l])).norm());
    }
    ScalarComparison { g0, v, w, a0, v0, n12, n21, n22, n11, lambda_field, lambda_tilde_field }
}

/// Closed forms against the generic pipeline, plus the commuted
/// corrector against the generic fiber corrector on every box fiber.
#[derive(Clone, Debug, Serialize)]
pub struct ScalarConsistency {
    pub comparison: ScalarComparison,
    pub n_coefficients: ScalarNCoefficients,
    pub corrector: f64,
    pub g0: Vec<Vec<f64>>,
    pub a0: Vec<f64>,
    pub v0: f64,
    pub w: f64,
    pub lambda: f64,
}

pub fn scalar_consistency(inp: &ScalarInput, cutoff: usize, eps: f64, n_cells: usize, times: &[f64]) -> Result<ScalarConsistency> {
    let p = build_scalar_problem(inp)?;
    let eff = scalar_effective(inp, cutoff)?;
    let nc = scalar_n_coefficients(&eff);
    let setup = EvolutionSetup::new(&p, cutoff, eps, n_cells)?;
    let comparison = compare_generic(&eff, &nc, &setup.cell, &setup.ng);
    let corrector = (0..setup.fibers.len())
        .into_par_iter()
        .map(|idx| {
            let op = setup.fiber_ops(idx);
            times
                .iter()
                .map(|&t| norm2(&(&op.corrector(t, false) - &commuted_corrector(&eff, &nc, &p.lattice, &op.k, eps, t))))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(ScalarConsistency { comparison, n_coefficients: nc, corrector, g0: eff.g0.clone(), a0: eff.a0.clone(), v0: eff.v0, w: eff.w, lambda: eff.lambda })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodic::{CellOptions, FiberSystem};

    fn trivial_1d(g: Coef) -> ScalarInput {
        ScalarInput {
            name: "t".into(),
            lattice: Lattice::cubic(1),
            g,
            amag: Coef::constant(zeros(1, 1)),
            v: Coef::func(1, 1, |y| one((2.0 * PI * y[0]).cos())),
            vpot: Coef::constant(zeros(1, 1)),
            lambda: 1.0,
            resolution: 16,
        }
    }

    #[test]
    fn poisson_closed_form() {
        let inp = trivial_1d(Coef::constant(eye(1)));
        let z = inp.zeta().unwrap();
        for (p, v) in z[0].vals.iter().enumerate() {
            let y = z[0].grid.coord(p)[0];
            assert!((v[(0, 0)].re + (2.0 * PI * y).sin() / (2.0 * PI)).abs() < 1e-13);
        }
    }

    #[test]
    fn nonzero_mean_rejected() {
        let mut inp = trivial_1d(Coef::constant(eye(1)));
        inp.v = Coef::constant(one(0.1));
        assert!(matches!(inp.zeta(), Err(HomogError::MeanNotZero(_))));
    }

    #[test]
    fn divergence_of_zeta_recovers_v() {
        let inp = ScalarInput::preset(&ScalarAmplitudes::default()).unwrap();
        let (grid, modes) = inp.grid();
        let z = inp.zeta().unwrap();
        let mut div = vec![ZERO; grid.len()];
        for (j, zj) in z.iter().enumerate() {
            let h = analyze(zj, &modes);
            let c: Vec<CMat> = h.iter().zip(&modes.list).map(|(v, l)| scaled(v, cplx(0.0, inp.lattice.dual_point(l)[j]))).collect();
            for (p, val) in synthesize(&modes, &c, &grid).vals.iter().enumerate() {
                div[p] += val[(0, 0)];
            }
        }
        let v = inp.v.sample(&grid);
        for p in 0..grid.len() {
            assert!((-div[p] - v.vals[p][(0, 0)]).norm() < 1e-12);
        }
    }

    #[test]
    fn harmonic_mean() {
        let g = Coef::func(1, 1, |y| one(2.0 + (2.0 * PI * y[0]).cos()));
        let mut inp = trivial_1d(g);
        inp.v = Coef::constant(zeros(1, 1));
        let eff = scalar_effective(&inp, 24).unwrap();
        assert!((eff.g0[0][0] - 3f64.sqrt()).abs() < 1e-10);
        assert!(eff.w.abs() < 1e-14);
    }

    #[test]
    fn trivial_metric_has_trivial_data() {
        let mut inp = trivial_1d(Coef::constant(eye(1)));
        inp.v = Coef::constant(zeros(1, 1));
        inp.vpot = Coef::constant(one(0.7));
        let eff = scalar_effective(&inp, 6).unwrap();
        let nc = scalar_n_coefficients(&eff);
        assert!((eff.g0[0][0] - 1.0).abs() < 1e-14 && eff.w.abs() < 1e-14 && eff.a0[0].abs() < 1e-14);
        assert!((eff.v0 - 0.7).abs() < 1e-14);
        assert!(nc.n12[0][0].abs() < 1e-14 && nc.n21[0].abs() < 1e-14 && nc.n22.abs() < 1e-14);
    }

    #[test]
    fn preset_agrees_with_generic_pipeline() {
        let inp = ScalarInput::preset(&ScalarAmplitudes::default()).unwrap();
        let p = build_scalar_problem(&inp).unwrap();
        let cutoff = 6;
        let fs = FiberSystem::new(&p, cutoff).unwrap();
        let cell = CellSolution::solve(&fs, &CellOptions::default()).unwrap();
        let ng = NgCoefficients::new(&fs, &cell);
        let eff = scalar_effective(&inp, cutoff).unwrap();
        let nc = scalar_n_coefficients(&eff);
        let cmp = compare_generic(&eff, &nc, &cell, &ng);
        assert!(eff.max_imag < 1e-12, "{}", eff.max_imag);
        assert!(cmp.effective_max() < 1e-8, "{cmp:?}");
        assert!(cmp.n_max() < 1e-8, "{cmp:?}");
        assert!(cmp.lambda_field < 1e-10 && cmp.lambda_tilde_field < 1e-10, "{cmp:?}");
        assert!(eff.w >= 0.0);
    }
}
