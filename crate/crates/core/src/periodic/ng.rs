//! Effective symbol L̂(k, ε), the third-order symbol 𝒩(k, ε) and the fiber
//! corrector, all expressed through cell averages.

use rayon::prelude::*;
use serde::Serialize;

use super::cell::{CellFields, CellSolution};
use super::fiber::FiberSystem;
use super::field::Field;
use crate::abstract_engine::corrector::envelopes;
use crate::error::{HomogError, Result};
use crate::linalg::*;

#[derive(Clone, Debug)]
pub struct NgCoefficients {
    pub b: Vec<CMat>,
    pub g0: CMat,
    pub v: CMat,
    pub w: CMat,
    pub qbar: CMat,
    pub abar: Vec<CMat>,
    pub lambda: f64,
    pub f0: CMat,
    /// M_G(k) = Σ k_j mg[j].
    pub mg: Vec<CMat>,
    pub mg1: Vec<CMat>,
    pub mg2: Vec<CMat>,
    pub tg0: CMat,
    pub tg: CMat,
    pub ttg: CMat,
    pub y: Vec<CMat>,
}

fn lin(parts: &[CMat], k: &[f64]) -> CMat {
    let mut acc = zeros(parts[0].nrows(), parts[0].ncols());
    for (p, &kj) in parts.iter().zip(k) {
        acc = &acc + &rscaled(p, kj);
    }
    acc
}

fn mean_of(a: &Field, b: &Field) -> CMat {
    a.mul(b).mean()
}

impl NgCoefficients {
    pub fn new(fs: &FiberSystem, cell: &CellSolution) -> NgCoefficients {
        let cf: CellFields = cell.fields(fs);
        let p = &fs.problem;
        let d = p.d();
        let grid = &fs.fine;
        let lam = p.lambda;
        let lg_adj = cf.lam_g.adjoint();
        let ltg_adj = cf.lamt_g.adjoint();
        let blamt_g = cf.blamt.adjoint().mul(&fs.g);
        let bj_field = |j: usize| Field::constant(grid, &p.b[j]);
        let bj_adj_field = |j: usize| Field::constant(grid, &adj(&p.b[j]));
        let mut mg = Vec::with_capacity(d);
        let mut mg1 = Vec::with_capacity(d);
        let mut mg2 = Vec::with_capacity(d);
        let mut y = Vec::with_capacity(d);
        let mut tg0 = zeros(p.m, p.m);
        let mut tg = zeros(p.m, p.n);
        let mut ttg = zeros(p.n, p.n);
        for j in 0..d {
            let bjs = bj_adj_field(j);
            let bj = bj_field(j);
            mg.push(plus_adj(&lg_adj.mul(&bjs).mul(&cf.gtilde).mean()));
            let apa = fs.a[j].add(&fs.a[j].adjoint());
            let m1 = &(&ltg_adj.mul(&bjs).mul(&cf.gtilde).mean() + &blamt_g.mul(&bj).mul(&cf.lam_g).mean()) + &mean_of(&apa, &cf.lam_g);
            mg1.push(m1);
            mg2.push(blamt_g.mul(&bj).mul(&cf.lamt_g).mean());
            y.push(mean_of(&apa, &cf.lamt_g));
            let aj = &fs.a[j];
            tg0 = &tg0 + &plus_adj(&lg_adj.mul(aj).mul(&cf.dlam[j]).mean());
            let t1 = lg_adj.mul(aj).mul(&cf.dlamt[j]).mean();
            let t2 = cf.dlam[j].adjoint().mul(&aj.adjoint()).mul(&cf.lamt_g).mean();
            tg = &(&tg + &t1) + &t2;
            ttg = &ttg + &ltg_adj.mul(aj).mul(&cf.dlamt[j]).mean();
        }
        tg = &(&tg + &mean_of(&lg_adj, &fs.qdens)) + &rscaled(&lg_adj.mean(), lam);
        ttg = &(&ttg + &mean_of(&ltg_adj, &fs.qdens)) + &rscaled(&ltg_adj.mean(), lam);
        NgCoefficients {
            b: p.b.clone(),
            g0: cell.g0.clone(),
            v: cell.v.clone(),
            w: cell.w.clone(),
            qbar: cell.qbar.clone(),
            abar: cell.abar.clone(),
            lambda: lam,
            f0: cell.f0.clone(),
            mg,
            mg1,
            mg2,
            tg0,
            tg,
            ttg,
            y,
        }
    }

    pub fn b_symbol(&self, k: &[f64]) -> CMat {
        lin(&self.b, k)
    }

    /// L̂(k, ε), the effective symbol before the f0 sandwich.
    pub fn l_hat(&self, k: &[f64], eps: f64) -> CMat {
        let b = self.b_symbol(k);
        let n = self.qbar.nrows();
        let mut l = b.adjoint() * &self.g0 * &b;
        let bv = b.adjoint() * &self.v;
        l = &l - &rscaled(&plus_adj(&bv), eps);
        l = &l + &rscaled(&lin(&self.abar, k), eps);
        let pot = &(&self.qbar - &self.w) + &rscaled(&eye(n), self.lambda);
        herm_part(&(&l + &rscaled(&pot, eps * eps)))
    }

    /// Effective symbol f0 L̂ f0.
    pub fn effective(&self, k: &[f64], eps: f64) -> CMat {
        herm_part(&(&self.f0 * self.l_hat(k, eps) * &self.f0))
    }

    /// The four parts [N11, N12, N21, N22] of 𝒩(k, ε) at ε = 1.
    pub fn n_parts(&self, k: &[f64]) -> [CMat; 4] {
        let b = self.b_symbol(k);
        let bs = adj(&b);
        let n11 = herm_part(&(&bs * lin(&self.mg, k) * &b));
        let m1 = lin(&self.mg1, k);
        let n12 = &(&(&bs * &self.tg0 * &b) + &(&m1 * &b)) + &(&bs * adj(&m1));
        let yk = lin(&self.y, k);
        let n21 = &(&(&plus_adj(&lin(&self.mg2, k)) + &(self.tg.adjoint() * &b)) + &(&bs * &self.tg)) + &plus_adj(&yk);
        [n11, herm_part(&n12), herm_part(&n21), plus_adj(&self.ttg)]
    }

    /// 𝒩(k, ε) = N11 + εN12 + ε²N21 + ε³N22.
    pub fn n_symbol(&self, k: &[f64], eps: f64) -> CMat {
        let [n11, n12, n21, n22] = self.n_parts(k);
        let mut out = n11;
        out = &out + &rscaled(&n12, eps);
        out = &out + &rscaled(&n21, eps * eps);
        herm_part(&(&out + &rscaled(&n22, eps * eps * eps)))
    }

    /// Smallest ratio λmin(f0 L̂(tθ, ε) f0) / (t² + ε²) over sampled
    /// directions and radii up to `tau_max`.
    pub fn cstar_measured(&self, dirs: &[Vec<f64>], tau_max: f64) -> f64 {
        let mut best = f64::INFINITY;
        for th in dirs {
            for i in 0..=24 {
                let phi = std::f64::consts::PI * i as f64 / 24.0;
                for &r in &[0.05, 0.25, 0.5, 0.75, 1.0] {
                    let tau = r * tau_max;
                    let (t, e) = (tau * phi.cos(), tau * phi.sin());
                    let k: Vec<f64> = th.iter().map(|x| x * t).collect();
                    best = best.min(min_eig(&self.effective(&k, e)) / (tau * tau));
                }
            }
        }
        best
    }
}

/// Principal term Φ̂ E' Φ̂* and corrector K at the fiber k, as matrices on the
/// mode space of the hatted family.
pub struct FiberApproximation {
    pub principal: CMat,
    pub corrector: CMat,
    pub lmin: f64,
}

pub fn fiber_approximation(fs: &FiberSystem, cell: &CellSolution, ng: &NgCoefficients, k: &[f64], eps: f64, s: f64) -> FiberApproximation {
    let n = fs.n();
    let dim = fs.dim();
    let z = fs.modes.zero_index();
    let h = ng.effective(k, eps);
    let (vals, vecs) = eigh(&h);
    let e = fn_from_eig(&vals, &vecs, |x| (-x * s).exp());
    let nn = &ng.f0 * ng.n_symbol(k, eps) * &ng.f0;
    let j = duhamel_sandwich(&vals, &vecs, &nn, s);
    let ep = &ng.f0 * &e * &ng.f0;
    let jp = &ng.f0 * &j * &ng.f0;
    let b = ng.b_symbol(k);
    let (lg, ltg) = cell.lam_g_hat();
    let mut w = zeros(dim, n);
    for l in 0..fs.modes.len() {
        let blk = &(&lg[l] * &b) + &rscaled(&ltg[l], eps);
        for a in 0..n {
            for c in 0..n {
                w[(l * n + a, c)] = blk[(a, c)];
            }
        }
    }
    let mut principal = zeros(dim, dim);
    for a in 0..n {
        for c in 0..n {
            principal[(z * n + a, z * n + c)] = ep[(a, c)];
        }
    }
    let wep = &w * &ep;
    let mut corrector = zeros(dim, dim);
    for i in 0..dim {
        for c in 0..n {
            corrector[(i, z * n + c)] += wep[(i, c)];
            corrector[(z * n + c, i)] += wep[(i, c)].conj();
        }
    }
    for a in 0..n {
        for c in 0..n {
            corrector[(z * n + a, z * n + c)] -= jp[(a, c)];
        }
    }
    FiberApproximation { principal, corrector, lmin: vals.first().copied().unwrap_or(0.0) }
}

#[derive(Clone, Debug)]
pub struct FiberRemainder {
    pub tau: f64,
    pub norm_principal: f64,
    pub norm: f64,
    pub envelope_pos: f64,
    pub envelope_nonneg: f64,
}

/// ‖M e^{-B(k,ε)s} M* − Φ̂E'Φ̂* − K‖ on one fiber.
pub fn fiber_remainder(fs: &FiberSystem, cell: &CellSolution, ng: &NgCoefficients, k: &[f64], eps: f64, s: f64, cstar: f64) -> Result<FiberRemainder> {
    let tau = (k.iter().map(|x| x * x).sum::<f64>() + eps * eps).sqrt();
    if tau > fs.constants.tau0 {
        return Err(HomogError::OutsideThresholdBall { tau, tau0: fs.constants.tau0 });
    }
    Ok(fiber_remainder_unchecked(fs, cell, ng, k, eps, s, cstar))
}

/// Same as [`fiber_remainder`] without the threshold-ball restriction;
/// used for the all-k envelope.
pub fn fiber_remainder_unchecked(fs: &FiberSystem, cell: &CellSolution, ng: &NgCoefficients, k: &[f64], eps: f64, s: f64, cstar: f64) -> FiberRemainder {
    let tau = (k.iter().map(|x| x * x).sum::<f64>() + eps * eps).sqrt();
    let full = fs.fiber_matrix(k, eps);
    let flow = &fs.m * expm_neg(&full, s) * fs.m.adjoint();
    let ap = fiber_approximation(fs, cell, ng, k, eps, s);
    let r0 = &flow - &ap.principal;
    let r1 = &r0 - &ap.corrector;
    let (envelope_pos, envelope_nonneg) = envelopes(cstar, tau * tau, s);
    FiberRemainder { tau, norm_principal: norm2(&r0), norm: norm2(&r1), envelope_pos, envelope_nonneg }
}

/// One (k, s) point of the all-k fiber envelope check.
#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeRow {
    pub k: Vec<f64>,
    pub s: f64,
    pub remainder_principal: f64,
    pub remainder: f64,
    /// remainder · s · e^{č*(|k|²+ε²)s/2}.
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnvelopeReport {
    pub eps: f64,
    /// Measured min λmin(B(k,ε))/(|k|²+ε²) over the grid; used in the ratio.
    pub cstar: f64,
    pub cstar_formula: f64,
    pub rows: Vec<EnvelopeRow>,
    /// Median ratio.
    pub constant: f64,
    pub max_ratio: f64,
}

impl EnvelopeReport {
    pub fn spread(&self) -> f64 {
        self.max_ratio / self.constant
    }
}

/// Cell-centered `side`^d grid over the Brillouin zone.
pub fn zone_grid(fs: &FiberSystem, side: usize) -> Vec<Vec<f64>> {
    let lat = &fs.problem.lattice;
    let d = lat.d;
    let dual: Vec<Vec<f64>> = (0..d).map(|j| lat.dual_point(&(0..d).map(|i| i64::from(i == j)).collect::<Vec<_>>())).collect();
    let mut idx: Vec<Vec<usize>> = vec![vec![]];
    for _ in 0..d {
        idx = idx.into_iter().flat_map(|v| (0..side).map(move |i| [v.clone(), vec![i]].concat())).collect();
    }
    idx.iter()
        .map(|ix| {
            let frac: Vec<f64> = ix.iter().map(|&i| (i as f64 + 0.5) / side as f64 - 0.5).collect();
            (0..d).map(|c| (0..d).map(|j| frac[j] * dual[j][c]).sum()).collect()
        })
        .collect()
}

/// Corrected fiber remainders scaled by s e^{č*(|k|²+ε²)s/2} on a zone grid.
pub fn fiber_envelope(fs: &FiberSystem, cell: &CellSolution, ng: &NgCoefficients, side: usize, eps: f64, times: &[f64]) -> Result<EnvelopeReport> {
    if side == 0 || times.is_empty() || times.iter().any(|&s| s <= 0.0) {
        return Err(HomogError::InvalidInput("envelope needs a nonempty k-grid and positive times".into()));
    }
    let ks = zone_grid(fs, side);
    let cstar = fs.cstar_fiber(&ks, &[eps]);
    let pts: Vec<(&Vec<f64>, f64)> = ks.iter().flat_map(|k| times.iter().map(move |&s| (k, s))).collect();
    let rows: Vec<EnvelopeRow> = pts
        .par_iter()
        .map(|(k, s)| {
            let k2: f64 = k.iter().map(|x| x * x).sum();
            let r = fiber_remainder_unchecked(fs, cell, ng, k, eps, *s, cstar);
            EnvelopeRow {
                k: k.to_vec(),
                s: *s,
                remainder_principal: r.norm_principal,
                remainder: r.norm,
                ratio: r.norm * s * (cstar * (k2 + eps * eps) * s / 2.0).exp(),
            }
        })
        .collect();
    let mut sorted: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    sorted.sort_by(f64::total_cmp);
    let constant = sorted[sorted.len() / 2];
    let max_ratio = *sorted.last().unwrap();
    Ok(EnvelopeReport { eps, cstar, cstar_formula: fs.constants.cstar_check, rows, constant, max_ratio })
}
