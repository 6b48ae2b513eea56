//! Agreement between the cell-average formulas and the generic threshold
//! engine run on the Galerkin fiber family.

use serde::Serialize;

use super::cell::CellSolution;
use super::fiber::FiberSystem;
use super::ng::NgCoefficients;
use crate::abstract_engine::{ThresholdData, ThresholdParams};
use crate::error::Result;
use crate::linalg::*;

#[derive(Clone, Debug, Serialize)]
pub struct CrossValidation {
    pub direction: Vec<f64>,
    /// Corrector columns: engine Z vs Λ b(θ).
    pub z: f64,
    /// Engine Z̃ vs Λ̃.
    pub ztilde: f64,
    /// Engine germ vs b(θ)* g⁰ b(θ).
    pub germ: f64,
    /// Engine L(t, ε) vs L̂(tθ, ε), max over the sample points.
    pub l: f64,
    /// Bordered engine N(t, ε) vs 𝒩(tθ, ε), max over the sample points.
    pub n: f64,
}

impl CrossValidation {
    pub fn passes(&self, tol_l: f64, tol_n: f64) -> bool {
        self.z.max(self.ztilde).max(self.germ).max(self.l) <= tol_l && self.n <= tol_n
    }
}

fn rel(a: &CMat, b: &CMat) -> f64 {
    (a - b).norm_l2() / (1.0 + b.norm_l2())
}

pub fn cross_validate(fs: &FiberSystem, cell: &CellSolution, ng: &NgCoefficients, theta: &[f64]) -> Result<CrossValidation> {
    let n = fs.n();
    let bf = fs.bordered(theta);
    let params = ThresholdParams { tau0: Some(fs.constants.tau0), ..fs.threshold_params() };
    let hat = ThresholdData::from_gram(&bf.base, Some(fs.hat_kernel()), &params)?;
    let bth = fs.problem.b_symbol(theta);
    let stack = |blocks: Vec<CMat>| {
        CMat::from_fn(fs.dim(), n, |i, j| blocks[i / n][(i % n, j)])
    };
    let lam_b = stack(cell.lam_hat.iter().map(|l| l * &bth).collect());
    let lamt = stack(cell.lamt_hat.clone());
    let z_err = rel(&hat.zc, &lam_b);
    let zt_err = rel(&hat.ztc, &lamt);
    let germ_ref = bth.adjoint() * &cell.g0 * &bth;
    let germ_err = rel(&hat.s, &germ_ref);
    let bt = bf.threshold_with_kernel(&params, Some(fs.hat_kernel()))?;
    let tau = fs.constants.tau0;
    let mut l_err = 0.0f64;
    let mut n_err = 0.0f64;
    for i in 0..=6 {
        let phi = std::f64::consts::PI * i as f64 / 6.0;
        for &r in &[0.3, 1.0] {
            let (t, e) = (r * tau * phi.cos(), r * tau * phi.sin());
            let k: Vec<f64> = theta.iter().map(|x| x * t).collect();
            l_err = l_err.max(rel(&hat.l_matrix(t, e), &ng.l_hat(&k, e)) / (t * t + e * e));
            let scale = (t * t + e * e).powf(1.5);
            n_err = n_err.max(rel(&bt.n_small(t, e), &ng.n_symbol(&k, e)) / scale);
        }
    }
    Ok(CrossValidation { direction: theta.to_vec(), z: z_err, ztilde: zt_err, germ: germ_err, l: l_err, n: n_err })
}
