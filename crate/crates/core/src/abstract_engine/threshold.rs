use faer::Side;

use super::family::{AbstractFamily, FormConstants, GramForm};
use crate::error::{HomogError, Result};
use crate::linalg::*;

/// Orthonormal basis `phi` of Ker X0 together with `d0`, the smallest
/// nonzero eigenvalue of X0*X0, and its largest eigenvalue.
#[derive(Clone, Debug)]
pub struct Kernel {
    pub phi: CMat,
    pub n: usize,
    pub d0: f64,
    pub top: f64,
}

impl Kernel {
    pub fn projection(&self) -> CMat {
        &self.phi * self.phi.adjoint()
    }

    /// Kernel from the singular values of X0, relative threshold `rel_tol`.
    pub fn from_x0(x0: &CMat, rel_tol: f64) -> Result<Kernel> {
        let dim = x0.ncols();
        let svd = x0.svd();
        let s = svd.s_diagonal();
        let smax = if s.nrows() > 0 { s.read(0).re } else { 0.0 };
        let rank = (0..s.nrows()).filter(|&i| s.read(i).re > rel_tol * smax).count();
        let n = dim - rank;
        if n == 0 {
            return Err(HomogError::DegenerateKernel);
        }
        let phi = cols(&svd.v().to_owned(), rank, n);
        let d0 = if rank > 0 { s.read(rank - 1).re.powi(2) } else { 0.0 };
        Ok(Kernel { phi, n, d0, top: smax * smax })
    }

    /// Kernel from the Gram matrix X0*X0 (eigenvalues below `rel_tol·max`).
    pub fn from_gram(x00: &CMat, rel_tol: f64) -> Result<Kernel> {
        let (vals, vecs) = eigh(x00);
        let top = vals.last().copied().unwrap_or(0.0).max(0.0);
        let n = vals.iter().filter(|&&v| v <= rel_tol * top).count();
        if n == 0 {
            return Err(HomogError::DegenerateKernel);
        }
        let d0 = vals.get(n).copied().unwrap_or(0.0);
        Ok(Kernel { phi: cols(&vecs, 0, n), n, d0, top })
    }
}

/// Orthogonal projection onto Ker X0 with its rank and d⁰.
pub fn kernel_projection(x0: &CMat) -> Result<(CMat, usize, f64)> {
    let k = Kernel::from_x0(x0, 1e-10)?;
    Ok((k.projection(), k.n, k.d0))
}

#[derive(Clone, Debug)]
pub struct ThresholdParams {
    pub kappa: f64,
    pub constants: Option<FormConstants>,
    pub delta: Option<f64>,
    pub tau0: Option<f64>,
    pub kernel_rel_tol: f64,
    pub cond_cap: f64,
}

impl Default for ThresholdParams {
    fn default() -> Self {
        ThresholdParams { kappa: 1.0, constants: None, delta: None, tau0: None, kernel_rel_tol: 1e-10, cond_cap: 1e12 }
    }
}

/// Solutions `zc`, `ztc` (dim×n) of the two auxiliary problems, so that
/// `Z = zc Φ*` and `Z̃ = ztc Φ*`.
pub fn solve_z_pair(gram: &GramForm, ker: &Kernel, cond_cap: f64) -> Result<(CMat, CMat)> {
    if ker.d0 <= 0.0 {
        return Ok((zeros(gram.dim(), ker.n), zeros(gram.dim(), ker.n)));
    }
    if ker.top / ker.d0 > cond_cap {
        return Err(HomogError::IllConditioned(format!("X0*X0 on the kernel complement has condition {:e}", ker.top / ker.d0)));
    }
    let p = ker.projection();
    let shifted = &gram.x00 + &rscaled(&p, ker.d0);
    let chol = shifted
        .cholesky(Side::Lower)
        .map_err(|_| HomogError::IllConditioned("shifted Gram matrix is not positive definite".into()))?;
    let rhs = faer::concat![[&gram.x01 * &ker.phi, &gram.y02 * &ker.phi]];
    let sol = faer::prelude::SpSolver::solve(&chol, &rhs);
    let sol = &sol - &p * &sol;
    let n = ker.n;
    Ok((rscaled(&cols(&sol, 0, n), -1.0), rscaled(&cols(&sol, n, n), -1.0)))
}

/// Germ blocks (n×n in the Φ basis): `S(θ) = θ1² s11 + θ1θ2 smix + θ2² s22`.
pub fn germ_blocks(gram: &GramForm, phi: &CMat, zc: &CMat, ztc: &CMat) -> (CMat, CMat, CMat) {
    let x00zc = &gram.x00 * zc;
    let x00ztc = &gram.x00 * ztc;
    let x01phi = &gram.x01 * phi;
    let a = zc.adjoint() * &x01phi;
    let s11 = &(&(zc.adjoint() * &x00zc) + &plus_adj(&a)) + &(phi.adjoint() * &gram.x11 * phi);
    let yy = plus_adj(&gram.y12);
    let smix = &rscaled(&plus_adj(&(zc.adjoint() * &x00ztc)), -1.0) + &(phi.adjoint() * &yy * phi);
    let pot = &gram.q + &rscaled(&gram.q0, gram.lambda);
    let s22 = &rscaled(&(ztc.adjoint() * &x00ztc), -1.0) + &(phi.adjoint() * &pot * phi);
    (herm_part(&s11), herm_part(&smix), herm_part(&s22))
}

/// Third-order blocks, `N(t,ε) = t³N11 + t²ε N12 + tε² N21 + ε³ N22`.
pub fn n_blocks(gram: &GramForm, phi: &CMat, zc: &CMat, ztc: &CMat) -> [CMat; 4] {
    let x10 = adj(&gram.x01);
    let y20 = adj(&gram.y02);
    let y21 = adj(&gram.y12);
    let h = |a: CMat| plus_adj(&a);
    let u = &(&x10 * zc) + &(&gram.x11 * phi);
    let y20zc = &y20 * zc;
    let y21phi = &y21 * phi;
    let y12phi = &gram.y12 * phi;
    let qphi = &gram.q * phi;
    let q0phi = &gram.q0 * phi;

    let n11 = h(zc.adjoint() * &u);
    let n12 = &(&(&(&h(ztc.adjoint() * &u) + &h(zc.adjoint() * &x10 * ztc)) + &h(zc.adjoint() * &y20zc))
        + &h(zc.adjoint() * &y21phi))
        + &h(phi.adjoint() * &y21 * zc);
    let mut n21 = &h(ztc.adjoint() * &gram.x01 * ztc) + &h(zc.adjoint() * &y20 * ztc);
    n21 = &n21 + &h(ztc.adjoint() * &y20zc);
    n21 = &n21 + &h(ztc.adjoint() * &y21phi);
    n21 = &n21 + &h(ztc.adjoint() * &y12phi);
    n21 = &n21 + &h(zc.adjoint() * &qphi);
    n21 = &n21 + &rscaled(&h(zc.adjoint() * &q0phi), gram.lambda);
    let mut n22 = &h(ztc.adjoint() * &gram.y02 * ztc) + &h(ztc.adjoint() * &qphi);
    n22 = &n22 + &rscaled(&h(ztc.adjoint() * &q0phi), gram.lambda);
    [n11, n12, n21, n22]
}

/// Threshold characteristics of a family at τ = 0.
#[derive(Clone, Debug)]
pub struct ThresholdData {
    pub phi: CMat,
    pub p: CMat,
    pub n: usize,
    pub d0: f64,
    pub zc: CMat,
    pub ztc: CMat,
    pub z: CMat,
    pub ztilde: CMat,
    /// `P_* X1` restricted to the kernel; only for dense families.
    pub r: Option<CMat>,
    pub s: CMat,
    pub smix: CMat,
    pub s22: CMat,
    pub n_blocks: [CMat; 4],
    pub kappa: f64,
    pub delta: f64,
    pub tau0: f64,
    pub cstar: Option<f64>,
    pub cstar_check: Option<f64>,
}

impl ThresholdData {
    pub fn from_family(fam: &AbstractFamily, params: &ThresholdParams) -> Result<ThresholdData> {
        fam.validate()?;
        let ker = Kernel::from_x0(&fam.x0, params.kernel_rel_tol)?;
        let mut params = params.clone();
        params.kappa = fam.kappa;
        if params.constants.is_none() {
            params.constants = fam.constants.clone();
        }
        let mut th = Self::from_gram(&fam.gram(), Some(ker), &params)?;
        th.r = Some(&(&fam.x1 * &th.phi) + &(&fam.x0 * &th.zc));
        Ok(th)
    }

    pub fn from_gram(gram: &GramForm, kernel: Option<Kernel>, params: &ThresholdParams) -> Result<ThresholdData> {
        let ker = match kernel {
            Some(k) => k,
            None => Kernel::from_gram(&gram.x00, params.kernel_rel_tol)?,
        };
        let (zc, ztc) = solve_z_pair(gram, &ker, params.cond_cap)?;
        let (s, smix, s22) = germ_blocks(gram, &ker.phi, &zc, &ztc);
        let n_blocks = n_blocks(gram, &ker.phi, &zc, &ztc);
        let kappa = params.kappa;
        let delta = params.delta.unwrap_or(kappa * ker.d0 / 26.0);
        let tau0 = match (params.tau0, &params.constants) {
            (Some(t), _) => t,
            (None, Some(c)) => {
                let x1sq = max_eig(&gram.x11).max(0.0);
                let q0n = max_eig(&gram.q0);
                let denom = (2.0 + c.c1 * c.c1 + c.c2) * x1sq + c.c_one + c.c3 + gram.lambda.abs() * q0n;
                (delta / denom).sqrt()
            }
            (None, None) => f64::INFINITY,
        };
        let cstar = match &params.constants {
            Some(c) if c.cstar.is_some() => c.cstar,
            Some(_) if tau0.is_finite() => Some(sample_cstar(gram, tau0)),
            _ => None,
        };
        let cstar_check = params.constants.as_ref().and_then(|c| {
            let mut c = c.clone();
            c.cstar = cstar;
            c.cstar_check(kappa)
        });
        let z = &zc * ker.phi.adjoint();
        let ztilde = &ztc * ker.phi.adjoint();
        Ok(ThresholdData {
            p: ker.projection(),
            phi: ker.phi,
            n: ker.n,
            d0: ker.d0,
            zc,
            ztc,
            z,
            ztilde,
            r: None,
            s,
            smix,
            s22,
            n_blocks,
            kappa,
            delta,
            tau0,
            cstar,
            cstar_check,
        })
    }

    pub fn dim(&self) -> usize {
        self.phi.nrows()
    }

    /// S(θ) in the Φ basis.
    pub fn germ(&self, theta: [f64; 2]) -> CMat {
        self.l_matrix(theta[0], theta[1])
    }

    /// L(t,ε) = t² S + tε Smix + ε² S22 in the Φ basis.
    pub fn l_matrix(&self, t: f64, eps: f64) -> CMat {
        let a = &rscaled(&self.s, t * t) + &rscaled(&self.smix, t * eps);
        &a + &rscaled(&self.s22, eps * eps)
    }

    /// N(t,ε) in the Φ basis.
    pub fn n_small(&self, t: f64, eps: f64) -> CMat {
        let [n11, n12, n21, n22] = &self.n_blocks;
        let mut a = rscaled(n11, t * t * t);
        a = &a + &rscaled(n12, t * t * eps);
        a = &a + &rscaled(n21, t * eps * eps);
        &a + &rscaled(n22, eps * eps * eps)
    }

    /// N(t,ε) on the full space.
    pub fn n_operator(&self, t: f64, eps: f64) -> CMat {
        self.lift(&self.n_small(t, eps))
    }

    /// Φ a Φ*.
    pub fn lift(&self, a: &CMat) -> CMat {
        &self.phi * a * self.phi.adjoint()
    }

    /// Germ lower bound used for envelopes: č* when known, otherwise the
    /// smallest eigenvalue of S(θ) over a θ sample.
    pub fn cstar_effective(&self) -> f64 {
        if let Some(c) = self.cstar_check {
            return c;
        }
        (0..64)
            .map(|k| {
                let a = std::f64::consts::PI * k as f64 / 64.0;
                min_eig(&self.germ([a.cos(), a.sin()]))
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// min over sampled t ∈ [−τ0, τ0] \ {0} of λmin(A(t))/t².
fn sample_cstar(gram: &GramForm, tau0: f64) -> f64 {
    let mut best = f64::INFINITY;
    for k in 0..24 {
        let t = tau0 * 10f64.powf(-2.0 * k as f64 / 23.0);
        for sign in [1.0, -1.0] {
            let tt = sign * t;
            best = best.min(min_eig(&gram.a_matrix(tt)) / (tt * tt));
        }
    }
    best / 1.1
}
