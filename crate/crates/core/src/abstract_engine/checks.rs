use super::family::GramForm;
use super::threshold::ThresholdData;
use crate::error::{HomogError, Result};
use crate::linalg::*;
use crate::quad::integrate;

#[derive(Clone, Debug)]
pub struct ProjectorReport {
    pub tau: f64,
    pub rank: usize,
    pub f_minus_p: f64,
    pub f_minus_p_f1: f64,
    pub bf_minus_sp: f64,
    pub bf_minus_sp_k: f64,
}

/// Compares the spectral projector F of B(τ;θ) for [0, δ] with its
/// threshold expansion.
pub fn threshold_projector_checks(gram: &GramForm, th: &ThresholdData, tau: f64, theta: [f64; 2]) -> Result<ProjectorReport> {
    if tau.abs() > th.tau0 {
        return Err(HomogError::OutsideThresholdBall { tau, tau0: th.tau0 });
    }
    let b = gram.b_theta(tau, theta);
    let (vals, vecs) = eigh(&b);
    let rank = vals.iter().filter(|&&v| v <= th.delta).count();
    if rank != th.n {
        return Err(HomogError::RankMismatch { rank, n: th.n });
    }
    let fv = cols(&vecs, 0, rank);
    let f = &fv * fv.adjoint();
    let fp = &f - &th.p;
    let f1 = &rscaled(&plus_adj(&th.z), theta[0]) + &rscaled(&plus_adj(&th.ztilde), theta[1]);
    let bf = &b * &f;
    let sth = th.germ(theta);
    let sp = th.lift(&sth);
    let k0 = {
        let w = &rscaled(&th.zc, theta[0]) + &rscaled(&th.ztc, theta[1]);
        plus_adj(&(&w * &sth * th.phi.adjoint()))
    };
    let k = &k0 + &th.n_operator(theta[0], theta[1]);
    let bf_sp = &bf - &rscaled(&sp, tau * tau);
    Ok(ProjectorReport {
        tau,
        rank,
        f_minus_p: norm2(&fp),
        f_minus_p_f1: norm2(&(&fp - &rscaled(&f1, tau))),
        bf_minus_sp: norm2(&bf_sp),
        bf_minus_sp_k: norm2(&(&bf_sp - &rscaled(&k, tau * tau * tau))),
    })
}

#[derive(Clone, Debug)]
pub struct MDecompositionReport {
    pub closed_vs_quadrature: f64,
    pub n_star_norm: f64,
    pub degenerate_pairs: usize,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Closed-form M0 + M* against quadrature of
/// ∫_0^s e^{-τ²S(θ)(s-u)} N(θ) e^{-τ²S(θ)u} du (kernel basis).
pub fn m_decomposition_check(th: &ThresholdData, tau: f64, theta: [f64; 2], s: f64) -> MDecompositionReport {
    let sth = th.germ(theta);
    let nth = th.n_small(theta[0], theta[1]);
    let (gamma, mut u) = eigh(&sth);
    let n = gamma.len();
    let scale = gamma.iter().fold(0.0f64, |m, g| m.max(g.abs())).max(f64::MIN_POSITIVE);
    let same = |a: f64, b: f64| (a - b).abs() < 1e-10 * scale;

    let mut degenerate_pairs = 0;
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && same(gamma[end], gamma[start]) {
            end += 1;
        }
        if end - start > 1 {
            degenerate_pairs += (end - start) * (end - start - 1) / 2;
            let ub = cols(&u, start, end - start);
            let (_, w) = eigh(&(ub.adjoint() * &nth * &ub));
            let rotated = &ub * &w;
            for j in 0..end - start {
                for i in 0..n {
                    u[(i, start + j)] = rotated[(i, j)];
                }
            }
        }
        start = end;
    }

    let nt = u.adjoint() * &nth * &u;
    let mu: Vec<f64> = (0..n).map(|l| nt[(l, l)].re).collect();
    let mut n_star = nt.clone();
    for l in 0..n {
        n_star[(l, l)] = ZERO;
    }
    let t2 = tau * tau;
    let decay: Vec<f64> = gamma.iter().map(|g| (-t2 * g * s).exp()).collect();
    let closed = CMat::from_fn(n, n, |k, j| {
        if k == j {
            cr(mu[k] * s * decay[k])
        } else if same(gamma[k], gamma[j]) {
            ZERO
        } else {
            let c = n_star[(k, j)] * cr(1.0 / (gamma[j] - gamma[k]));
            c * cr((decay[k] - decay[j]) / t2)
        }
    });
    let closed = &u * &closed * u.adjoint();
    let (quad, _) = integrate(
        |x| &(&expm_neg(&sth, t2 * (s - x)) * &nth) * &expm_neg(&sth, t2 * x),
        0.0,
        s,
        1e-12,
    );
    MDecompositionReport {
        closed_vs_quadrature: norm2(&(&closed - &quad)),
        n_star_norm: norm2(&n_star),
        degenerate_pairs,
        mu,
        gamma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstract_engine::family::AbstractFamily;
    use crate::abstract_engine::threshold::ThresholdParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projector_at_zero_tau_is_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let fam = AbstractFamily::random(6, 2, &mut rng);
        let th = ThresholdData::from_family(&fam, &ThresholdParams::default()).unwrap();
        let r = threshold_projector_checks(&fam.gram(), &th, 0.0, [0.6, 0.8]).unwrap();
        assert_eq!(r.rank, 2);
        assert!(r.f_minus_p < 1e-10 && r.f_minus_p_f1 < 1e-10);
    }

    #[test]
    fn n_one_has_no_off_diagonal_part() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fam = AbstractFamily::random(5, 1, &mut rng);
        let th = ThresholdData::from_family(&fam, &ThresholdParams::default()).unwrap();
        let r = m_decomposition_check(&th, 0.5 * th.tau0, [0.8, 0.6], 2.0);
        assert_eq!(r.n_star_norm, 0.0);
        assert!(r.closed_vs_quadrature < 1e-9);
    }

    #[test]
    fn two_dim_kernel_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let fam = AbstractFamily::random(7, 2, &mut rng);
        let th = ThresholdData::from_family(&fam, &ThresholdParams::default()).unwrap();
        let r = m_decomposition_check(&th, 0.7 * th.tau0, [0.6, -0.8], 1.5);
        assert!(r.closed_vs_quadrature < 1e-9, "{}", r.closed_vs_quadrature);
    }
}
