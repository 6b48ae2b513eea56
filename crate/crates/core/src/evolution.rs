//! Evolution on a periodic box of N_cells^d scaled cells: Bloch
//! decomposition, fine and homogenized flows, correctors, the Duhamel
//! source problem and ε-sweeps of the operator errors.
//!
//! Box fields live on the grid of N_cells·(2N+1) points per direction, in
//! box coordinates z ∈ [0,1)^d. Box frequency q splits as q = j + N_cells·l
//! with j in the centered residue range and l a Galerkin mode, so the fiber
//! with quasimomentum k_j carries the coefficients at all q ≡ j.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HomogError, Result};
use crate::fit::{fit_rate, RateFit};
use crate::linalg::*;
use crate::periodic::field::{synthesize_freqs, Field, Grid};
use crate::periodic::{CellOptions, CellSolution, FiberExpansion, FiberSystem, NgCoefficients, PeriodicProblem};

#[derive(Clone, Debug)]
pub struct EvolutionSetup {
    pub fs: FiberSystem,
    pub cell: CellSolution,
    pub ng: NgCoefficients,
    pub eps: f64,
    pub n_cells: usize,
    pub box_grid: Grid,
    /// Residue multi-indices j, one per fiber.
    pub fibers: Vec<Vec<i64>>,
    /// Quasimomenta k_j in scaled units.
    pub quasi: Vec<Vec<f64>>,
    /// Decay constant used in the envelopes.
    pub cstar: f64,
    expansion: FiberExpansion,
    /// Index of l − l' in the mode list, row-major over (l, l').
    diff_index: Vec<Option<usize>>,
    /// Λ_G(q) b_j for every mode q and direction j.
    lam_b: Vec<Vec<CMat>>,
    lamt_g: Vec<CMat>,
}

/// Per-fiber operators, independent of time.
pub struct FiberOps {
    pub k: Vec<f64>,
    /// M·V for the eigenvectors V of B(k, ε).
    mv: CMat,
    vals: Vec<f64>,
    hom: Vec<(Vec<f64>, CMat)>,
    nn: Vec<CMat>,
    w: CMat,
    n: usize,
    z: usize,
    f0: CMat,
}

impl FiberOps {
    fn dim(&self) -> usize {
        self.mv.nrows()
    }

    /// M e^{-B t} M* at scaled time t.
    pub fn fine_flow(&self, t: f64) -> CMat {
        let e: Vec<f64> = self.vals.iter().map(|l| (-l * t).exp()).collect();
        let scaled_cols = CMat::from_fn(self.dim(), e.len(), |i, j| self.mv[(i, j)] * cr(e[j]));
        &scaled_cols * self.mv.adjoint()
    }

    fn hom_block(&self, l: usize, t: f64) -> CMat {
        let (vals, vecs) = &self.hom[l];
        &self.f0 * fn_from_eig(vals, vecs, |x| (-x * t).exp()) * &self.f0
    }

    fn duhamel_block(&self, l: usize, t: f64) -> CMat {
        let (vals, vecs) = &self.hom[l];
        &self.f0 * duhamel_sandwich(vals, vecs, &self.nn[l], t) * &self.f0
    }

    fn put(&self, out: &mut CMat, l: usize, blk: &CMat) {
        let n = self.n;
        for a in 0..n {
            for c in 0..n {
                out[(l * n + a, l * n + c)] += blk[(a, c)];
            }
        }
    }

    /// Block diagonal f0 e^{-f0 L̂ f0 t} f0 over all modes.
    pub fn principal(&self, t: f64) -> CMat {
        let mut out = zeros(self.dim(), self.dim());
        for l in 0..self.hom.len() {
            self.put(&mut out, l, &self.hom_block(l, t));
        }
        out
    }

    /// Fiber corrector at scaled time t; with `smoothing` only the zero
    /// mode of the input and of the Duhamel term is kept.
    pub fn corrector(&self, t: f64, smoothing: bool) -> CMat {
        let dim = self.dim();
        let n = self.n;
        let mut e = zeros(dim, dim);
        let mut j = zeros(dim, dim);
        let active: Vec<usize> = if smoothing { vec![self.z] } else { (0..self.hom.len()).collect() };
        for &l in &active {
            self.put(&mut e, l, &self.hom_block(l, t));
            self.put(&mut j, l, &self.duhamel_block(l, t));
        }
        let we = if smoothing {
            let cz = cols(&self.w, self.z * n, n) * block(&e, self.z * n, self.z * n, n, n);
            let mut out = zeros(dim, dim);
            for i in 0..dim {
                for c in 0..n {
                    out[(i, self.z * n + c)] = cz[(i, c)];
                }
            }
            out
        } else {
            &self.w * &e
        };
        &plus_adj(&we) - &j
    }
}

impl EvolutionSetup {
    pub fn new(problem: &PeriodicProblem, cutoff: usize, eps: f64, n_cells: usize) -> Result<EvolutionSetup> {
        let fs = FiberSystem::new(problem, cutoff)?;
        let cell = CellSolution::solve(&fs, &CellOptions::default())?;
        let ng = NgCoefficients::new(&fs, &cell);
        Self::from_parts(fs, cell, ng, eps, n_cells)
    }

    pub fn from_parts(fs: FiberSystem, cell: CellSolution, ng: NgCoefficients, eps: f64, n_cells: usize) -> Result<EvolutionSetup> {
        if !(eps > 0.0 && eps <= 1.0) {
            return Err(HomogError::InvalidInput(format!("eps must lie in (0, 1], got {eps}")));
        }
        if n_cells == 0 {
            return Err(HomogError::InvalidInput("n_cells must be positive".into()));
        }
        let lat = &fs.problem.lattice;
        if !lat.is_orthogonal() {
            return Err(HomogError::InvalidInput("the box decomposition needs an orthogonal lattice basis".into()));
        }
        let d = lat.d;
        let side = n_cells * fs.modes.side();
        let box_grid = Grid::new(vec![side; d]);
        let lo = -(((n_cells as i64) - 1) / 2);
        let hi = n_cells as i64 / 2;
        let mut fibers: Vec<Vec<i64>> = vec![vec![]];
        for _ in 0..d {
            fibers = fibers.into_iter().flat_map(|f| (lo..=hi).map(move |j| [f.clone(), vec![j]].concat())).collect();
        }
        let quasi = fibers.iter().map(|j| lat.dual_point(j).iter().map(|x| x / n_cells as f64).collect()).collect();
        let cstar = fs.constants.cstar_check;
        let expansion = fs.expansion();
        let modes = &fs.modes;
        let diff_index = modes
            .list
            .iter()
            .flat_map(|l| modes.list.iter().map(move |lp| l.iter().zip(lp).map(|(a, b)| a - b).collect::<Vec<i64>>()))
            .map(|diff| modes.index_of(&diff))
            .collect();
        let (lg, lamt_g) = cell.lam_g_hat();
        let lam_b = lg.iter().map(|l| fs.problem.b.iter().map(|b| l * b).collect()).collect();
        Ok(EvolutionSetup { fs, cell, ng, eps, n_cells, box_grid, fibers, quasi, cstar, expansion, diff_index, lam_b, lamt_g })
    }

    pub fn n(&self) -> usize {
        self.fs.n()
    }

    fn freq(&self, j: &[i64], l: &[i64]) -> Vec<i64> {
        j.iter().zip(l).map(|(a, b)| a + self.n_cells as i64 * b).collect()
    }

    /// Fiber components of a box field (n×1 values).
    pub fn decompose(&self, field: &Field) -> Vec<CMat> {
        let spec = field.spectrum();
        let n = self.n();
        self.fibers
            .iter()
            .map(|j| {
                let mut v = zeros(self.fs.dim(), 1);
                for (li, l) in self.fs.modes.list.iter().enumerate() {
                    let c = spec.at(&self.freq(j, l));
                    for a in 0..n {
                        v[(li * n + a, 0)] = c[(a, 0)];
                    }
                }
                v
            })
            .collect()
    }

    pub fn synthesize(&self, parts: &[CMat]) -> Field {
        let n = self.n();
        let mut freqs = Vec::new();
        let mut coeffs = Vec::new();
        for (j, v) in self.fibers.iter().zip(parts) {
            for (li, l) in self.fs.modes.list.iter().enumerate() {
                freqs.push(self.freq(j, l));
                coeffs.push(CMat::from_fn(n, 1, |a, _| v[(li * n + a, 0)]));
            }
        }
        synthesize_freqs(&freqs, &coeffs, n, 1, &self.box_grid)
    }

    /// L2 norm over the physical box of volume (ε N_cells)^d |Ω|.
    pub fn box_norm(&self, field: &Field) -> f64 {
        let vol = (self.eps * self.n_cells as f64).powi(self.box_grid.d() as i32) * self.fs.problem.lattice.cell_volume;
        let s: f64 = field.vals.iter().map(|v| v.norm_l2().powi(2)).sum();
        (vol * s / field.vals.len() as f64).sqrt()
    }

    /// Π_ε: keeps the frequencies in Ω̃/ε, i.e. the zero mode of every fiber.
    pub fn smoothing_apply(&self, field: &Field) -> Field {
        let n = self.n();
        let z = self.fs.modes.zero_index();
        let parts: Vec<CMat> = self
            .decompose(field)
            .into_iter()
            .map(|v| CMat::from_fn(v.nrows(), 1, |i, _| if i / n == z { v[(i, 0)] } else { ZERO }))
            .collect();
        self.synthesize(&parts)
    }

    pub fn fiber_ops(&self, idx: usize) -> FiberOps {
        let k = self.quasi[idx].clone();
        let fs = &self.fs;
        let eps = self.eps;
        let n = fs.n();
        let (vals, vecs) = eigh(&self.expansion.matrix(&k, eps));
        let mv = &fs.m * &vecs;
        let pts: Vec<Vec<f64>> = fs.xi.iter().map(|x| x.iter().zip(&k).map(|(a, b)| a + b).collect()).collect();
        let f0 = self.ng.f0.clone();
        let hom: Vec<(Vec<f64>, CMat)> = pts.iter().map(|x| eigh(&self.ng.effective(x, eps))).collect();
        let nn: Vec<CMat> = pts.iter().map(|x| herm_part(&(&f0 * self.ng.n_symbol(x, eps) * &f0))).collect();
        let modes = &fs.modes;
        let nm = modes.len();
        let mut w = zeros(nm * n, nm * n);
        for l in 0..nm {
            for lp in 0..nm {
                let Some(q) = self.diff_index[l * nm + lp] else { continue };
                for a in 0..n {
                    for c in 0..n {
                        let mut acc = self.lamt_g[q][(a, c)] * cr(eps);
                        for (j, lb) in self.lam_b[q].iter().enumerate() {
                            acc += lb[(a, c)] * cr(pts[lp][j]);
                        }
                        w[(l * n + a, lp * n + c)] = acc;
                    }
                }
            }
        }
        FiberOps { k, mv, vals, hom, nn, w, n, z: modes.zero_index(), f0 }
    }

    /// Raises NonPositiveEffective when the homogenized symbol drops below
    /// č*(|ξ|² + ε²) on some mode of the box.
    pub fn check_effective(&self) -> Result<()> {
        let eps = self.eps;
        for k in &self.quasi {
            for x in &self.fs.xi {
                let p: Vec<f64> = x.iter().zip(k).map(|(a, b)| a + b).collect();
                let bound = self.cstar * (p.iter().map(|v| v * v).sum::<f64>() + eps * eps);
                let min = min_eig(&self.ng.effective(&p, eps));
                if min < bound * (1.0 - 1e-8) - 1e-13 {
                    return Err(HomogError::NonPositiveEffective { min, bound });
                }
            }
        }
        Ok(())
    }

    fn scaled_time(&self, s: f64) -> f64 {
        s / (self.eps * self.eps)
    }

    fn apply(&self, phi: &Field, op: impl Fn(&FiberOps) -> CMat + Sync) -> Field {
        let parts = self.decompose(phi);
        let out: Vec<CMat> = (0..self.fibers.len()).into_par_iter().map(|i| op(&self.fiber_ops(i)) * &parts[i]).collect();
        self.synthesize(&out)
    }

    /// u_ε(s) = f^ε e^{-𝓑_ε s} (f^ε)* φ.
    pub fn evolve_fine(&self, phi: &Field, s: f64) -> Field {
        let t = self.scaled_time(s);
        self.apply(phi, |op| op.fine_flow(t))
    }

    /// u₀(s) = f₀ e^{-𝓑⁰ s} f₀ φ.
    pub fn evolve_homogenized(&self, phi: &Field, s: f64) -> Result<Field> {
        self.check_effective()?;
        let t = self.scaled_time(s);
        Ok(self.apply(phi, |op| op.principal(t)))
    }

    /// ε K_ε(s) φ (with smoothing) or ε K⁰_ε(s) φ (without, s ≥ ε²).
    pub fn corrector_apply(&self, phi: &Field, s: f64, smoothing: bool) -> Result<Field> {
        if !smoothing && s < self.eps * self.eps {
            return Err(HomogError::RegimeViolation { s, eps: self.eps });
        }
        let t = self.scaled_time(s);
        Ok(self.apply(phi, |op| op.corrector(t, smoothing)))
    }

    /// Default corrector variant: smoothing below s = ε².
    pub fn default_smoothing(&self, s: f64) -> bool {
        s < self.eps * self.eps
    }
}

/// Exact box operator-norm errors at time s: sup over fibers.
#[derive(Clone, Debug, Serialize)]
pub struct BoxErrors {
    pub principal: f64,
    pub corrected: f64,
    /// Principal-term error restricted to each probe fiber's zero mode.
    #[serde(skip)]
    probe_blocks: Vec<(usize, CMat, CMat)>,
}

impl EvolutionSetup {
    /// Fiber-supremum norms of flow − principal and flow − principal −
    /// corrector. Fibers with |j| ≤ `probe_band` also return the zero-mode
    /// columns of both remainders for the random probes.
    pub fn box_errors(&self, s: f64, smoothing: bool, probe_band: i64) -> BoxErrors {
        let t = self.scaled_time(s);
        let n = self.n();
        let z = self.fs.modes.zero_index();
        let res: Vec<(f64, f64, Option<(usize, CMat, CMat)>)> = (0..self.fibers.len())
            .into_par_iter()
            .map(|i| {
                let op = self.fiber_ops(i);
                let r0 = &op.fine_flow(t) - &op.principal(t);
                let r1 = &r0 - &op.corrector(t, smoothing);
                let probe = if self.fibers[i].iter().all(|j| j.abs() <= probe_band) {
                    Some((i, cols(&r0, z * n, n), cols(&r1, z * n, n)))
                } else {
                    None
                };
                (norm2(&r0), norm2(&r1), probe)
            })
            .collect();
        let principal = res.iter().map(|r| r.0).fold(0.0, f64::max);
        let corrected = res.iter().map(|r| r.1).fold(0.0, f64::max);
        let probe_blocks = res.into_iter().filter_map(|r| r.2).collect();
        BoxErrors { principal, corrected, probe_blocks }
    }
}

/// Largest relative error ‖Rφ‖/‖φ‖ over random band-limited φ.
fn probe_norms(errs: &BoxErrors, n: usize, probes: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = (0.0f64, 0.0f64);
    for _ in 0..probes {
        let mut num0 = 0.0;
        let mut num1 = 0.0;
        let mut den = 0.0;
        for (_, r0, r1) in &errs.probe_blocks {
            let c = CMat::from_fn(n, 1, |_, _| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                cplx(re, im)
            });
            den += c.norm_l2().powi(2);
            num0 += (r0 * &c).norm_l2().powi(2);
            num1 += (r1 * &c).norm_l2().powi(2);
        }
        if den > 0.0 {
            best.0 = best.0.max((num0 / den).sqrt());
            best.1 = best.1.max((num1 / den).sqrt());
        }
    }
    best
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepOptions {
    pub cutoff: usize,
    /// n_cells = round(cells_factor / ε).
    pub cells_factor: f64,
    pub probes: usize,
    pub probe_band: i64,
    pub seed: u64,
    /// None picks the default variant per ε.
    pub smoothing: Option<bool>,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions { cutoff: 8, cells_factor: 4.0, probes: 32, probe_band: 4, seed: 7, smoothing: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub eps: f64,
    pub s: f64,
    pub n_cells: usize,
    pub err_principal: f64,
    pub err_corrected: f64,
    pub proxy_principal: f64,
    pub proxy_corrected: f64,
    /// Proxy and exact norm differ by more than 2×.
    pub proxy_flag: bool,
    pub envelope_principal: f64,
    pub envelope_corrected: f64,
    /// Local log-slope of the corrected error against the previous point.
    pub slope_running: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub problem: String,
    pub points: Vec<SweepPoint>,
    pub fit_principal: RateFit,
    pub fit_corrected: RateFit,
    /// Largest ε below which the corrected error never exceeds the principal one.
    pub crossover: Option<f64>,
}

/// Errors at machine precision count as exact agreement.
const FLOOR: f64 = 1e-10;

fn fit_or_exact(series: &[(f64, f64)]) -> Result<RateFit> {
    if series.iter().all(|p| p.1 <= FLOOR) {
        return Ok(RateFit::ExactAgreement);
    }
    fit_rate(series)
}

pub fn envelope_principal(eps: f64, s: f64, cstar: f64) -> f64 {
    eps / (s + eps * eps).sqrt() * (-cstar * s / 2.0).exp()
}

pub fn envelope_corrected(eps: f64, s: f64, cstar: f64) -> f64 {
    eps * eps / (s + eps * eps) * (-cstar * s / 2.0).exp()
}

/// Cell data shared by every point of a sweep.
pub struct SweepBase {
    pub problem: String,
    pub fs: FiberSystem,
    pub cell: CellSolution,
    pub ng: NgCoefficients,
}

impl SweepBase {
    pub fn new(problem: &PeriodicProblem, cutoff: usize) -> Result<SweepBase> {
        let fs = FiberSystem::new(problem, cutoff)?;
        let cell = CellSolution::solve(&fs, &CellOptions::default())?;
        let ng = NgCoefficients::new(&fs, &cell);
        Ok(SweepBase { problem: problem.name.clone(), fs, cell, ng })
    }

    /// Errors at one ε; `index` offsets the probe seed. slope_running is
    /// filled in by [`summarize_sweep`].
    pub fn point(&self, eps: f64, s: f64, index: usize, opts: &SweepOptions) -> Result<SweepPoint> {
        if s < eps * eps {
            return Err(HomogError::RegimeViolation { s, eps });
        }
        let n_cells = ((opts.cells_factor / eps).round() as usize).max(1);
        let setup = EvolutionSetup::from_parts(self.fs.clone(), self.cell.clone(), self.ng.clone(), eps, n_cells)?;
        let smoothing = opts.smoothing.unwrap_or_else(|| setup.default_smoothing(s));
        let errs = setup.box_errors(s, smoothing, opts.probe_band);
        let (p0, p1) = probe_norms(&errs, setup.n(), opts.probes, opts.seed.wrapping_add(index as u64));
        let flag = |exact: f64, proxy: f64| exact > FLOOR && proxy * 2.0 < exact;
        Ok(SweepPoint {
            eps,
            s,
            n_cells,
            err_principal: errs.principal,
            err_corrected: errs.corrected,
            proxy_principal: p0,
            proxy_corrected: p1,
            proxy_flag: flag(errs.principal, p0) || flag(errs.corrected, p1),
            envelope_principal: envelope_principal(eps, s, setup.cstar),
            envelope_corrected: envelope_corrected(eps, s, setup.cstar),
            slope_running: None,
        })
    }
}

pub fn check_eps_list(eps_list: &[f64]) -> Result<()> {
    if eps_list.len() < 3 {
        return Err(HomogError::InsufficientDecades(eps_list.len()));
    }
    for w in eps_list.windows(2) {
        let r = w[0] / w[1];
        if (r - 2.0).abs() > 1e-9 {
            return Err(HomogError::InvalidInput(format!("eps list must be dyadic and decreasing, got {} then {}", w[0], w[1])));
        }
    }
    Ok(())
}

/// Running slopes, fits and crossover for points ordered by decreasing ε.
pub fn summarize_sweep(problem: &str, mut points: Vec<SweepPoint>) -> Result<SweepReport> {
    for i in 1..points.len() {
        let (prev, cur) = (&points[i - 1], &points[i]);
        points[i].slope_running = (prev.err_corrected > FLOOR && cur.err_corrected > FLOOR)
            .then(|| (cur.err_corrected / prev.err_corrected).ln() / (cur.eps / prev.eps).ln());
    }
    let fit_principal = fit_or_exact(&points.iter().map(|p| (p.eps, p.err_principal)).collect::<Vec<_>>())?;
    let fit_corrected = fit_or_exact(&points.iter().map(|p| (p.eps, p.err_corrected)).collect::<Vec<_>>())?;
    let mut crossover = None;
    let mut sorted: Vec<&SweepPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.eps.total_cmp(&b.eps));
    for p in sorted {
        if p.err_corrected <= p.err_principal {
            crossover = Some(p.eps);
        } else {
            break;
        }
    }
    Ok(SweepReport { problem: problem.to_string(), points, fit_principal, fit_corrected, crossover })
}

pub fn convergence_sweep(problem: &PeriodicProblem, eps_list: &[f64], s: f64, opts: &SweepOptions) -> Result<SweepReport> {
    check_eps_list(eps_list)?;
    let emax = eps_list.iter().cloned().fold(0.0, f64::max);
    if s < emax * emax {
        return Err(HomogError::RegimeViolation { s, eps: emax });
    }
    let base = SweepBase::new(problem, opts.cutoff)?;
    let points = eps_list.iter().enumerate().map(|(i, &eps)| base.point(eps, s, i, opts)).collect::<Result<Vec<_>>>()?;
    summarize_sweep(&base.problem, points)
}

/// A source F(·, s̃) given at sample times, linear in between.
#[derive(Clone, Debug)]
pub struct Source {
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
}

impl Source {
    pub fn at(&self, t: f64) -> Field {
        let ts = &self.times;
        if ts.len() == 1 || t <= ts[0] {
            return self.fields[0].clone();
        }
        for i in 1..ts.len() {
            if t <= ts[i] {
                let w = (t - ts[i - 1]) / (ts[i] - ts[i - 1]);
                return self.fields[i - 1].scale(cr(1.0 - w)).add(&self.fields[i].scale(cr(w)));
            }
        }
        self.fields[ts.len() - 1].clone()
    }

    /// ‖F‖ in L_p((0, T); L2) from the samples (trapezoid rule).
    pub fn norm(&self, setup: &EvolutionSetup, p: f64) -> f64 {
        let vals: Vec<f64> = self.fields.iter().map(|f| setup.box_norm(f)).collect();
        if p.is_infinite() {
            return vals.iter().cloned().fold(0.0, f64::max);
        }
        let mut acc = 0.0;
        for i in 1..self.times.len() {
            acc += 0.5 * (vals[i - 1].powf(p) + vals[i].powf(p)) * (self.times[i] - self.times[i - 1]);
        }
        acc.powf(1.0 / p)
    }
}

pub fn theta1(eps: f64, p: f64) -> f64 {
    if p < 2.0 {
        eps.powf(2.0 - 2.0 / p)
    } else if p == 2.0 {
        eps * (1.0 + eps.ln().abs()).sqrt()
    } else {
        eps
    }
}

pub fn theta2(eps: f64, p: f64) -> f64 {
    if p.is_infinite() {
        1.0 + eps.ln().abs()
    } else {
        1.0
    }
}

#[derive(Clone, Debug)]
pub struct DuhamelOptions {
    pub steps: usize,
    pub rel_tol: f64,
    pub p_norm: f64,
}

impl Default for DuhamelOptions {
    fn default() -> Self {
        DuhamelOptions { steps: 64, rel_tol: 1e-4, p_norm: f64::INFINITY }
    }
}

#[derive(Clone, Debug)]
pub struct SolutionPair {
    pub times: Vec<f64>,
    pub u_eps: Vec<Field>,
    pub u0: Vec<Field>,
    pub corrector_field: Vec<Field>,
    pub err_principal: Vec<f64>,
    pub err_corrected: Vec<f64>,
    pub envelope_principal: Vec<f64>,
    pub envelope_corrected: Vec<f64>,
    /// Largest relative change under halving the s̃-step.
    pub quadrature_change: f64,
}

impl EvolutionSetup {
    /// Solutions of the source problem with the smoothed corrector; the
    /// source-side corrector terms enter only for p > 2.
    pub fn duhamel_solve(&self, phi: &Field, source: Option<&Source>, times: &[f64], opts: &DuhamelOptions) -> Result<SolutionPair> {
        let nf = self.fibers.len();
        let phi_parts = self.decompose(phi);
        let use_src_corr = opts.p_norm > 2.0;
        let eps2 = self.eps * self.eps;
        let ops: Vec<FiberOps> = (0..nf).into_par_iter().map(|i| self.fiber_ops(i)).collect();
        let mut out = SolutionPair {
            times: times.to_vec(),
            u_eps: vec![],
            u0: vec![],
            corrector_field: vec![],
            err_principal: vec![],
            err_corrected: vec![],
            envelope_principal: vec![],
            envelope_corrected: vec![],
            quadrature_change: 0.0,
        };
        let phi_norm = self.box_norm(phi);
        let f_norm = source.map(|f| f.norm(self, opts.p_norm)).unwrap_or(0.0);
        for &s in times {
            let t = s / eps2;
            let mut ue: Vec<CMat> = (0..nf).map(|i| ops[i].fine_flow(t) * &phi_parts[i]).collect();
            let mut u0: Vec<CMat> = (0..nf).map(|i| ops[i].principal(t) * &phi_parts[i]).collect();
            let mut corr: Vec<CMat> = (0..nf).map(|i| ops[i].corrector(t, true) * &phi_parts[i]).collect();
            if let Some(src) = source {
                let integral = |steps: usize| -> Vec<[CMat; 3]> {
                    let h = s / steps as f64;
                    let samples: Vec<Vec<CMat>> = (0..steps).map(|m| self.decompose(&src.at((m as f64 + 0.5) * h))).collect();
                    (0..nf)
                        .into_par_iter()
                        .map(|i| {
                            let dim = ops[i].dim();
                            let mut acc = [zeros(dim, 1), zeros(dim, 1), zeros(dim, 1)];
                            for (m, smp) in samples.iter().enumerate() {
                                let tau = (s - (m as f64 + 0.5) * h) / eps2;
                                let fv = &smp[i];
                                acc[0] = &acc[0] + &rscaled(&(ops[i].fine_flow(tau) * fv), h);
                                acc[1] = &acc[1] + &rscaled(&(ops[i].principal(tau) * fv), h);
                                if use_src_corr {
                                    acc[2] = &acc[2] + &rscaled(&(ops[i].corrector(tau, true) * fv), h);
                                }
                            }
                            acc
                        })
                        .collect()
                };
                let coarse = integral(opts.steps);
                let fine = integral(2 * opts.steps);
                let mut diff = 0.0f64;
                let mut size = 0.0f64;
                for (c, f) in coarse.iter().zip(&fine) {
                    for q in 0..3 {
                        diff += (&f[q] - &c[q]).norm_l2().powi(2);
                        size += f[q].norm_l2().powi(2);
                    }
                }
                let change = if size > 0.0 { (diff / size).sqrt() } else { 0.0 };
                out.quadrature_change = out.quadrature_change.max(change);
                if change > opts.rel_tol {
                    return Err(HomogError::QuadratureUnderResolved(change));
                }
                for i in 0..nf {
                    // Richardson extrapolation of the midpoint rule
                    let ex = |q: usize| rscaled(&(&rscaled(&fine[i][q], 4.0) - &coarse[i][q]), 1.0 / 3.0);
                    ue[i] = &ue[i] + &ex(0);
                    u0[i] = &u0[i] + &ex(1);
                    corr[i] = &corr[i] + &ex(2);
                }
            }
            let fe = self.synthesize(&ue);
            let f0 = self.synthesize(&u0);
            let fc = self.synthesize(&corr);
            let e0 = self.box_norm(&fe.add(&f0.scale(cr(-1.0))));
            let e1 = self.box_norm(&fe.add(&f0.scale(cr(-1.0))).add(&fc.scale(cr(-1.0))));
            let p = opts.p_norm;
            let src_env = if p > 2.0 {
                let pp = if p.is_infinite() { 1.0 } else { p / (p - 1.0) };
                self.eps.powf(2.0 / pp) * theta2(self.eps, p)
            } else {
                theta1(self.eps, p)
            };
            out.envelope_principal.push(envelope_principal(self.eps, s, self.cstar) * phi_norm + theta1(self.eps, p) * f_norm);
            out.envelope_corrected.push(envelope_corrected(self.eps, s, self.cstar) * phi_norm + src_env * f_norm);
            out.err_principal.push(e0);
            out.err_corrected.push(e1);
            out.u_eps.push(fe);
            out.u0.push(f0);
            out.corrector_field.push(fc);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use crate::periodic::ng::fiber_approximation;
    use crate::periodic::problem::Coef;
    use std::f64::consts::PI;

    fn bump(setup: &EvolutionSetup) -> Field {
        Field::from_fn(&setup.box_grid, setup.n(), 1, |z| {
            let c: f64 = z.iter().map(|x| (2.0 * PI * x).cos()).sum();
            CMat::from_fn(setup.n(), 1, |a, _| cr((1.5 * c).exp() * (1.0 + 0.3 * a as f64)))
        })
    }

    fn random_field(setup: &EvolutionSetup, band: i64, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = setup.box_grid.d();
        let mut freqs: Vec<Vec<i64>> = vec![vec![]];
        for _ in 0..d {
            freqs = freqs.into_iter().flat_map(|f| (-band..=band).map(move |q| [f.clone(), vec![q]].concat())).collect();
        }
        let coeffs: Vec<CMat> = freqs.iter().map(|_| random_complex(setup.n(), 1, &mut rng)).collect();
        synthesize_freqs(&freqs, &coeffs, setup.n(), 1, &setup.box_grid)
    }

    fn diff(a: &Field, b: &Field) -> f64 {
        a.vals.iter().zip(&b.vals).map(|(x, y)| (x - y).norm_l2()).fold(0.0, f64::max)
    }

    fn osc(eps: f64, n_cells: usize) -> EvolutionSetup {
        EvolutionSetup::new(&PeriodicProblem::oscillatory_1d(), 4, eps, n_cells).unwrap()
    }

    #[test]
    fn bloch_round_trip() {
        let setup = osc(0.25, 4);
        let phi = random_field(&setup, 17, 1);
        assert!(diff(&setup.synthesize(&setup.decompose(&phi)), &phi) < 1e-12);
        let p2 = EvolutionSetup::new(&PeriodicProblem::random_smooth(2, 2, 2, 2, 5), 2, 0.5, 3).unwrap();
        let phi = random_field(&p2, 7, 2);
        assert!(diff(&p2.synthesize(&p2.decompose(&phi)), &phi) < 1e-12);
    }

    #[test]
    fn smoothing_matches_mask_oracle() {
        let setup = osc(0.25, 4);
        let phi = random_field(&setup, 17, 3);
        let out = setup.smoothing_apply(&phi);
        // brute force: keep physical frequencies ξ with εξ in (−π, π]
        let spec = phi.spectrum();
        let side = setup.box_grid.shape[0] as i64;
        let mut freqs = vec![];
        let mut coeffs = vec![];
        for q in -side / 2..side - side / 2 {
            let xi = 2.0 * PI * q as f64 / (setup.eps * setup.n_cells as f64);
            let k = setup.eps * xi;
            if k > -PI + 1e-12 && k <= PI + 1e-12 {
                freqs.push(vec![q]);
                coeffs.push(spec.at(&[q]).clone());
            }
        }
        let oracle = synthesize_freqs(&freqs, &coeffs, 1, 1, &setup.box_grid);
        assert!(diff(&out, &oracle) < 1e-12);
        assert!(diff(&setup.smoothing_apply(&out), &out) < 1e-12);
        let c = Field::constant(&setup.box_grid, &CMat::from_fn(1, 1, |_, _| cplx(0.3, 0.1)));
        assert!(diff(&setup.smoothing_apply(&c), &c) < 1e-13);
    }

    #[test]
    fn constant_coefficients_single_mode() {
        let p = PeriodicProblem::constant(1, rscaled(&eye(1), 2.0), 0.5);
        let eps = 0.25;
        let setup = EvolutionSetup::new(&p, 3, eps, 4).unwrap();
        let q = 3;
        let phi = Field::from_fn(&setup.box_grid, 1, 1, |z| {
            let a = 2.0 * PI * q as f64 * z[0];
            CMat::from_fn(1, 1, |_, _| cplx(a.cos(), a.sin()))
        });
        let s = 0.01;
        let xi = 2.0 * PI * q as f64 / (eps * 4.0);
        let expect = (-(2.0 * xi * xi + 0.5) * s).exp();
        let u = setup.evolve_fine(&phi, s);
        let u0 = setup.evolve_homogenized(&phi, s).unwrap();
        assert!(diff(&u, &phi.scale(cr(expect))) < 1e-12);
        assert!(diff(&u0, &phi.scale(cr(expect))) < 1e-12);
        assert!(diff(&setup.evolve_fine(&phi, 0.0), &phi) < 1e-12);
        let k = setup.corrector_apply(&phi, s, true).unwrap();
        assert!(k.sup_norm() < 1e-13);
    }

    #[test]
    fn harmonic_mean_homogenized_decay() {
        let setup = EvolutionSetup::new(&PeriodicProblem::harmonic_mean_1d(), 12, 0.5, 2).unwrap();
        let phi = Field::from_fn(&setup.box_grid, 1, 1, |z| {
            let a = 2.0 * PI * z[0];
            CMat::from_fn(1, 1, |_, _| cplx(a.cos(), a.sin()))
        });
        let s = 0.2;
        let xi = 2.0 * PI / (0.5 * 2.0);
        let expect = (-(3f64.sqrt() * xi * xi + 1.0) * s).exp();
        let u0 = setup.evolve_homogenized(&phi, s).unwrap();
        assert!(diff(&u0, &phi.scale(cr(expect))) < 1e-9);
    }

    #[test]
    fn semigroup() {
        let setup = EvolutionSetup::new(&PeriodicProblem::harmonic_mean_1d(), 4, 0.5, 3).unwrap();
        let phi = bump(&setup);
        let (s1, s2) = (0.05, 0.08);
        let a = setup.evolve_fine(&setup.evolve_fine(&phi, s1), s2);
        let b = setup.evolve_fine(&phi, s1 + s2);
        assert!(diff(&a, &b) < 1e-10);
        let h = PeriodicProblem::zero_corrector_2d();
        let sh = EvolutionSetup::new(&h, 2, 0.5, 2).unwrap();
        let phi = random_field(&sh, 4, 9);
        let a = sh.evolve_homogenized(&sh.evolve_homogenized(&phi, s1).unwrap(), s2).unwrap();
        let b = sh.evolve_homogenized(&phi, s1 + s2).unwrap();
        assert!(diff(&a, &b) < 1e-10);
    }

    /// Box Galerkin operator assembled as a single cell of period N_cells,
    /// stepped by Crank–Nicolson.
    #[test]
    fn fine_flow_matches_crank_nicolson() {
        let n_cells = 3;
        let eps = 1.0 / 3.0;
        let cutoff = 3;
        let base = PeriodicProblem::oscillatory_1d();
        let setup = EvolutionSetup::new(&base, cutoff, eps, n_cells).unwrap();
        let wrap = |c: &Coef| {
            let c = c.clone();
            let (r, k) = c.shape();
            Coef::func(r, k, move |z| {
                let y = [(n_cells as f64 * z[0]).fract()];
                match &c {
                    Coef::Func { f, .. } => f(&y),
                    Coef::Samples(_) => unreachable!(),
                }
            })
        };
        let mut boxed = base.clone();
        boxed.lattice = Lattice::new(vec![vec![n_cells as f64]]).unwrap();
        boxed.g = wrap(&base.g);
        boxed.f = wrap(&base.f);
        boxed.a = base.a.iter().map(wrap).collect();
        boxed.qdens = wrap(&base.qdens);
        let big = FiberSystem::new(&boxed, (n_cells * (2 * cutoff + 1) - 1) / 2).unwrap();
        let bmat = big.fiber_matrix(&[0.0], eps);
        let phi = bump(&setup);
        let s = 0.02;
        let steps = 4000;
        let dt = s / (eps * eps) / steps as f64;
        let dim = bmat.nrows();
        let lhs = &eye(dim) + &rscaled(&bmat, 0.5 * dt);
        let rhs_op = &eye(dim) - &rscaled(&bmat, 0.5 * dt);
        let step = solve(&lhs, &rhs_op);
        let spec = phi.spectrum();
        let coeff = |list: &[Vec<i64>], sp: &crate::periodic::Spectrum| CMat::from_fn(list.len(), 1, |i, _| sp.at(&list[i])[(0, 0)]);
        let mut v = big.m.adjoint() * coeff(&big.modes.list, &spec);
        for _ in 0..steps {
            v = &step * &v;
        }
        let u_cn = &big.m * &v;
        let u = setup.evolve_fine(&phi, s);
        let u_hat = coeff(&big.modes.list, &u.spectrum());
        let rel = (&u_hat - &u_cn).norm_l2() / u_cn.norm_l2();
        assert!(rel < 1e-5, "{rel}");
    }

    #[test]
    fn smoothed_corrector_matches_fiber_approximation() {
        let setup = osc(0.25, 4);
        let eps = setup.eps;
        for i in 0..setup.fibers.len() {
            let op = setup.fiber_ops(i);
            let t = 3.0;
            let ap = fiber_approximation(&setup.fs, &setup.cell, &setup.ng, &op.k, eps, t);
            assert!((&op.corrector(t, true) - &ap.corrector).norm_l2() < 1e-12);
            let z = setup.fs.modes.zero_index();
            assert!((block(&op.principal(t), z, z, 1, 1) - block(&ap.principal, z, z, 1, 1)).norm_l2() < 1e-13);
        }
    }

    #[test]
    fn regime_is_enforced() {
        let setup = osc(0.5, 2);
        let phi = bump(&setup);
        assert!(matches!(setup.corrector_apply(&phi, 0.1, false), Err(HomogError::RegimeViolation { .. })));
        assert!(setup.corrector_apply(&phi, 0.1, true).is_ok());
        assert!(setup.default_smoothing(0.1));
    }

    #[test]
    fn contraction_bound() {
        let setup = osc(0.25, 4);
        let c = &setup.fs.constants;
        for i in 0..setup.fibers.len() {
            let op = setup.fiber_ops(i);
            let t = 0.5 / (setup.eps * setup.eps);
            let bound = c.f_sup * c.f_sup * (-c.cstar_check * setup.eps * setup.eps * t).exp();
            assert!(norm2(&op.fine_flow(t)) <= bound * (1.0 + 1e-10));
        }
    }

    #[test]
    fn duhamel_reduces_without_source() {
        let setup = osc(0.5, 2);
        let phi = bump(&setup);
        let sol = setup.duhamel_solve(&phi, None, &[0.1], &DuhamelOptions::default()).unwrap();
        assert!(diff(&sol.u_eps[0], &setup.evolve_fine(&phi, 0.1)) < 1e-12);
        assert!(diff(&sol.u0[0], &setup.evolve_homogenized(&phi, 0.1).unwrap()) < 1e-12);
    }

    #[test]
    fn duhamel_constant_source_closed_form() {
        let p = PeriodicProblem::constant(1, rscaled(&eye(1), 1.0), 2.0);
        let setup = EvolutionSetup::new(&p, 2, 0.5, 2).unwrap();
        let c = |v: f64| Field::constant(&setup.box_grid, &CMat::from_fn(1, 1, |_, _| cr(v)));
        let src = Source { times: vec![0.0, 1.0], fields: vec![c(3.0), c(3.0)] };
        let s = 0.7;
        let opts = DuhamelOptions { steps: 32, rel_tol: 1e-3, p_norm: f64::INFINITY };
        let sol = setup.duhamel_solve(&c(1.0), Some(&src), &[s], &opts).unwrap();
        let a: f64 = 2.0;
        let expect = 3.0 / a + (-a * s).exp() * (1.0 - 3.0 / a);
        assert!((sol.u0[0].vals[0][(0, 0)].re - expect).abs() < 1e-7);
        assert!((sol.u_eps[0].vals[0][(0, 0)].re - expect).abs() < 1e-7);
    }

    #[test]
    fn sweep_rejects_short_lists() {
        let p = PeriodicProblem::oscillatory_1d();
        assert!(matches!(convergence_sweep(&p, &[0.5, 0.25], 0.5, &SweepOptions::default()), Err(HomogError::InsufficientDecades(2))));
    }

    #[test]
    fn sweep_constant_is_exact() {
        let p = PeriodicProblem::constant(1, rscaled(&eye(1), 1.5), 1.0);
        let opts = SweepOptions { cutoff: 3, ..Default::default() };
        let r = convergence_sweep(&p, &[0.5, 0.25, 0.125], 0.5, &opts).unwrap();
        assert_eq!(r.fit_principal, RateFit::ExactAgreement);
        assert_eq!(r.fit_corrected, RateFit::ExactAgreement);
    }
}
