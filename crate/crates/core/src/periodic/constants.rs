use serde::{Deserialize, Serialize};

use super::field::Grid;
use super::problem::PeriodicProblem;
use crate::abstract_engine::FormConstants;
use crate::linalg::*;

/// Form-bound constants of the fiber family, computed from sup norms of
/// the coefficients sampled on a grid. κ = 1 throughout.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DoConstants {
    pub alpha0: f64,
    pub alpha1: f64,
    pub g_sup: f64,
    pub g_inv_sup: f64,
    pub f_sup: f64,
    pub f_inv_sup: f64,
    pub q_sup: f64,
    pub a_sup: Vec<f64>,
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c_one: f64,
    pub beta: f64,
    pub cstar: f64,
    pub kappa: f64,
    pub delta: f64,
    pub tau0: f64,
    pub cstar_check: f64,
}

impl DoConstants {
    pub fn compute(p: &PeriodicProblem, grid: &Grid) -> DoConstants {
        let (alpha0, alpha1) = p.alphas();
        let g = p.g.sample(grid);
        let f = p.f.sample(grid);
        let q = p.qdens.sample(grid);
        let g_sup = g.sup_norm();
        let g_inv_sup = g.vals.iter().map(|v| 1.0 / min_eig(v)).fold(0.0, f64::max);
        let f_sup = f.sup_norm();
        let f_inv_sup = f
            .vals
            .iter()
            .map(|v| 1.0 / v.singular_values().last().copied().unwrap_or(0.0))
            .fold(0.0, f64::max);
        let q_sup = q.sup_norm();
        let a_sup: Vec<f64> = p.a.iter().map(|a| a.sample(grid).sup_norm()).collect();
        let kappa = 1.0;
        let qmin = q.vals.iter().map(min_eig).fold(f64::INFINITY, f64::min);
        let c0_hat = -qmin;
        let c0 = if c0_hat >= 0.0 { c0_hat * f_sup * f_sup } else { c0_hat / (f_inv_sup * f_inv_sup) };
        let c3 = q_sup * f_sup * f_sup;
        let c1 = (g_inv_sup / alpha0).sqrt();
        let c2 = 0.0;
        let c_one: f64 = a_sup.iter().map(|a| a * a).sum::<f64>() * f_sup * f_sup;
        let c4 = 4.0 / kappa * c1 * c1 * c_one;
        let lam = p.lambda;
        let beta = if lam >= 0.0 { lam / (f_inv_sup * f_inv_sup) - c0 - c4 } else { lam * f_sup * f_sup - c0 - c4 };
        let cstar = alpha0 / (f_inv_sup * f_inv_sup * g_inv_sup);
        let delta = 0.25 * kappa * cstar * p.lattice.r0 * p.lattice.r0;
        let denom = (2.0 + c1 * c1 + c2) * alpha1 * g_sup * f_sup * f_sup + c_one + c3 + lam.abs() * f_sup * f_sup;
        let tau0 = (delta / denom).sqrt();
        let cstar_check = 0.5 * (kappa * cstar).min(2.0 * beta);
        DoConstants {
            alpha0,
            alpha1,
            g_sup,
            g_inv_sup,
            f_sup,
            f_inv_sup,
            q_sup,
            a_sup,
            c0,
            c1,
            c2,
            c3,
            c4,
            c_one,
            beta,
            cstar,
            kappa,
            delta,
            tau0,
            cstar_check,
        }
    }

    pub fn form_constants(&self) -> FormConstants {
        FormConstants {
            c0: self.c0,
            c1: self.c1,
            c2: self.c2,
            c3: self.c3,
            c4: self.c4,
            c_one: self.c_one,
            beta: self.beta,
            cstar: Some(self.cstar),
        }
    }
}
