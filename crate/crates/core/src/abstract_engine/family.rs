use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HomogError, Result};
use crate::linalg::*;

/// Constants of the form conditions. `c_one` is C(1), `cstar` the lower
/// bound of A(t)/t² near t = 0.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct FormConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c_one: f64,
    pub beta: f64,
    pub cstar: Option<f64>,
}

impl FormConstants {
    /// ½ min(κ c*, 2β), if c* is known.
    pub fn cstar_check(&self, kappa: f64) -> Option<f64> {
        self.cstar.map(|cs| 0.5 * (kappa * cs).min(2.0 * self.beta))
    }
}

/// All quantities the engine needs, expressed through Gram blocks:
/// `x_ab = X_a* X_b`, `y02 = Y0* Y2`, `y12 = Y1* Y2`.
#[derive(Clone, Debug)]
pub struct GramForm {
    pub x00: CMat,
    pub x01: CMat,
    pub x11: CMat,
    pub y02: CMat,
    pub y12: CMat,
    pub q: CMat,
    pub q0: CMat,
    pub lambda: f64,
}

impl GramForm {
    pub fn dim(&self) -> usize {
        self.x00.nrows()
    }

    /// A(t) = X(t)*X(t).
    pub fn a_matrix(&self, t: f64) -> CMat {
        let mixed = plus_adj(&self.x01);
        &(&self.x00 + &rscaled(&mixed, t)) + &rscaled(&self.x11, t * t)
    }

    /// B(t, ε) = A(t) + ε(Y2*Y(t) + Y(t)*Y2) + ε²(Q + λQ0).
    pub fn b_matrix(&self, t: f64, eps: f64) -> CMat {
        let mut b = self.a_matrix(t);
        let y = &self.y02 + &rscaled(&self.y12, t);
        b = &b + &rscaled(&plus_adj(&y), eps);
        let pot = &self.q + &rscaled(&self.q0, self.lambda);
        &b + &rscaled(&pot, eps * eps)
    }

    pub fn b_theta(&self, tau: f64, theta: [f64; 2]) -> CMat {
        self.b_matrix(tau * theta[0], tau * theta[1])
    }

    /// Gram blocks of the family `X M, Y M, M*QM, Q0 = M*M` built on top of
    /// `self` (which must carry Q0 = I).
    pub fn bordered(&self, m: &CMat) -> GramForm {
        let conj = |a: &CMat| m.adjoint() * a * m;
        GramForm {
            x00: conj(&self.x00),
            x01: conj(&self.x01),
            x11: conj(&self.x11),
            y02: conj(&self.y02),
            y12: conj(&self.y12),
            q: conj(&self.q),
            q0: m.adjoint() * m,
            lambda: self.lambda,
        }
    }
}

/// Dense finite-dimensional realization of the abstract pencil.
#[derive(Clone, Debug)]
pub struct AbstractFamily {
    pub x0: CMat,
    pub x1: CMat,
    pub y0: CMat,
    pub y1: CMat,
    pub y2: CMat,
    pub q: CMat,
    pub q0: CMat,
    pub lambda: f64,
    pub kappa: f64,
    pub constants: Option<FormConstants>,
}

fn inflate(x: f64) -> f64 {
    if x >= 0.0 {
        1.1 * x
    } else {
        x / 1.1
    }
}

impl AbstractFamily {
    pub fn dim_h(&self) -> usize {
        self.x0.ncols()
    }
    pub fn dim_hstar(&self) -> usize {
        self.x0.nrows()
    }
    pub fn dim_htilde(&self) -> usize {
        self.y0.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.dim_h();
        let shapes = [
            ("X1", &self.x1, self.dim_hstar()),
            ("Y1", &self.y1, self.dim_htilde()),
            ("Y2", &self.y2, self.dim_htilde()),
            ("Q", &self.q, h),
            ("Q0", &self.q0, h),
        ];
        for (name, m, rows) in shapes {
            if m.nrows() != rows || m.ncols() != h {
                return Err(HomogError::InvalidInput(format!("{name} has shape {}x{}", m.nrows(), m.ncols())));
            }
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(HomogError::InvalidInput(format!("kappa = {} not in (0,1]", self.kappa)));
        }
        let scale = 1.0 + self.q.norm_l2();
        if herm_defect(&self.q) > 1e-10 * scale {
            return Err(HomogError::InvalidInput("Q is not Hermitian".into()));
        }
        if herm_defect(&self.q0) > 1e-10 * (1.0 + self.q0.norm_l2()) || min_eig(&self.q0) <= 0.0 {
            return Err(HomogError::InvalidInput("Q0 is not Hermitian positive definite".into()));
        }
        Ok(())
    }

    pub fn x_at(&self, t: f64) -> CMat {
        &self.x0 + &rscaled(&self.x1, t)
    }

    pub fn y_at(&self, t: f64) -> CMat {
        &self.y0 + &rscaled(&self.y1, t)
    }

    pub fn gram(&self) -> GramForm {
        GramForm {
            x00: self.x0.adjoint() * &self.x0,
            x01: self.x0.adjoint() * &self.x1,
            x11: self.x1.adjoint() * &self.x1,
            y02: self.y0.adjoint() * &self.y2,
            y12: self.y1.adjoint() * &self.y2,
            q: herm_part(&self.q),
            q0: herm_part(&self.q0),
            lambda: self.lambda,
        }
    }

    pub fn b_matrix(&self, t: f64, eps: f64) -> CMat {
        let x = self.x_at(t);
        let y = self.y_at(t);
        let mut b = x.adjoint() * &x;
        let cross = self.y2.adjoint() * &y;
        b = &b + &rscaled(&plus_adj(&cross), eps);
        &b + &rscaled(&(&self.q + &rscaled(&self.q0, self.lambda)), eps * eps)
    }

    fn t_grid() -> Vec<f64> {
        let mut ts = vec![0.0];
        for k in 1..=80 {
            let t = 0.05 * k as f64;
            ts.push(t);
            ts.push(-t);
        }
        for t in [8.0, 16.0, 64.0, 256.0] {
            ts.push(t);
            ts.push(-t);
        }
        ts
    }

    /// sup over u of ‖M u‖² / ‖X(t) u‖², +inf if M does not vanish on Ker X(t).
    fn ratio_sup(x: &CMat, m: &CMat) -> f64 {
        let a = x.adjoint() * x;
        let (vals, vecs) = eigh(&a);
        let amax = vals.last().copied().unwrap_or(0.0).max(0.0);
        let tol = 1e-10 * amax.max(f64::MIN_POSITIVE);
        let mm = m.adjoint() * m;
        let mmax = max_eig(&mm).max(0.0);
        let mut kernel_leak = 0.0f64;
        let range: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > tol).collect();
        for i in 0..vals.len() {
            if vals[i] <= tol {
                let v = cols(&vecs, i, 1);
                kernel_leak = kernel_leak.max((v.adjoint() * &mm * &v)[(0, 0)].re);
            }
        }
        if kernel_leak > 1e-9 * (1.0 + mmax) {
            return f64::INFINITY;
        }
        if range.is_empty() {
            return 0.0;
        }
        let r = range.len();
        let w = CMat::from_fn(vecs.nrows(), r, |i, j| vecs[(i, range[j])] * cr(1.0 / vals[range[j]].sqrt()));
        max_eig(&(w.adjoint() * &mm * &w)).max(0.0)
    }

    /// Sampled estimates of the form constants (c2 = 0, c3 = ‖Q‖), inflated
    /// by 1.1. `cstar` is filled in by the threshold stage once τ0 is known.
    pub fn estimate_constants(&self) -> FormConstants {
        let kappa = self.kappa;
        let ts = Self::t_grid();
        let mut c0 = f64::NEG_INFINITY;
        let mut c1sq = 0.0f64;
        for &t in &ts {
            let x = self.x_at(t);
            let a = x.adjoint() * &x;
            let m = &rscaled(&self.q, -1.0) - &rscaled(&a, 1.0 - kappa);
            c0 = c0.max(max_eig(&m));
            c1sq = c1sq.max(Self::ratio_sup(&x, &self.y_at(t)));
        }
        let c1 = inflate(c1sq.sqrt());
        let y2y2 = self.y2.adjoint() * &self.y2;
        let c_of = |nu: f64| -> f64 {
            let mut c = 0.0f64;
            for &t in &ts {
                let x = self.x_at(t);
                let a = x.adjoint() * &x;
                c = c.max(max_eig(&(&y2y2 - &rscaled(&a, nu))));
            }
            inflate(c.max(1e-300))
        };
        let c_one = c_of(1.0);
        let c4 = if c1 > 0.0 { 4.0 / kappa * c1 * c1 * c_of(kappa * kappa / (16.0 * c1 * c1)) } else { 0.0 };
        let c0 = inflate(c0);
        let c3 = inflate(norm2(&self.q));
        let beta = if self.lambda >= 0.0 {
            self.lambda * min_eig(&self.q0) - c0 - c4
        } else {
            self.lambda * max_eig(&self.q0) - c0 - c4
        };
        FormConstants { c0, c1, c2: 0.0, c3, c4, c_one, beta, cstar: None }
    }

    /// Random family with kernel dimension `n`, nonzero singular values of X0
    /// in [0.5, 1), `Y0 = C X0`,
    /// `Y1 = C X1` and λ chosen so that β > 0.
    pub fn random<R: Rng + ?Sized>(dim: usize, n: usize, rng: &mut R) -> AbstractFamily {
        assert!(n >= 1 && n < dim);
        let dstar = dim + 1;
        let dtilde = dim;
        let u = random_unitary(dstar, rng);
        let v = random_unitary(dim, rng);
        let sigma = CMat::from_fn(dstar, dim, |i, j| if i == j && i < dim - n { cr(rng.gen_range(0.5..1.0)) } else { ZERO });
        let x0 = &(&u * &sigma) * v.adjoint();
        let unit = |m: CMat| {
            let s = norm2(&m);
            rscaled(&m, 1.0 / s)
        };
        let x1 = rscaled(&unit(random_complex(dstar, dim, rng)), 0.5);
        let c = rscaled(&unit(random_complex(dtilde, dstar, rng)), 0.5);
        let y0 = &c * &x0;
        let y1 = &c * &x1;
        let y2 = rscaled(&unit(random_complex(dtilde, dim, rng)), 0.5);
        let q = rscaled(&unit(random_hermitian(dim, rng)), 0.5);
        let r = random_complex(dim, dim, rng);
        let q0 = &(r.adjoint() * &r) + &rscaled(&eye(dim), 0.5 * dim as f64);
        let q0 = rscaled(&q0, 1.0 / max_eig(&q0));
        let mut fam = AbstractFamily { x0, x1, y0, y1, y2, q, q0, lambda: 0.0, kappa: 0.5, constants: None };
        let mut cst = fam.estimate_constants();
        let q0min = min_eig(&fam.q0);
        fam.lambda = (cst.c0 + cst.c4).max(0.0) / q0min + 1.0;
        cst.beta = fam.lambda * q0min - cst.c0 - cst.c4;
        fam.constants = Some(cst);
        fam
    }
}
