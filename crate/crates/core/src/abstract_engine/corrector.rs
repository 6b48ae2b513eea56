use super::family::GramForm;
use super::threshold::ThresholdData;
use crate::error::{HomogError, Result};
use crate::linalg::*;

/// Kernel-basis pieces of the corrector: `E = e^{-L s}` and the Duhamel
/// integral `J` of N between two copies of the flow.
pub struct CorrectorParts {
    pub e: CMat,
    pub j: CMat,
    pub lmin: f64,
}

pub fn corrector_parts(th: &ThresholdData, t: f64, eps: f64, s: f64) -> Result<CorrectorParts> {
    let l = th.l_matrix(t, eps);
    let (vals, vecs) = eigh(&l);
    let lmin = vals.first().copied().unwrap_or(0.0);
    if let Some(c) = th.cstar_check {
        let bound = c * (t * t + eps * eps);
        let tol = 1e-9 * (1.0 + vals.last().copied().unwrap_or(0.0).abs());
        if lmin < bound - tol {
            return Err(HomogError::NonPositiveL { min: lmin, bound });
        }
    }
    let e = fn_from_eig(&vals, &vecs, |x| (-x * s).exp());
    let j = duhamel_sandwich(&vals, &vecs, &th.n_small(t, eps), s);
    Ok(CorrectorParts { e, j, lmin })
}

/// K(t,ε,s) on the full space.
pub fn corrector_k(th: &ThresholdData, t: f64, eps: f64, s: f64) -> Result<CMat> {
    let parts = corrector_parts(th, t, eps, s)?;
    let w = &rscaled(&th.zc, t) + &rscaled(&th.ztc, eps);
    let a = &w * &parts.e * th.phi.adjoint();
    Ok(&plus_adj(&a) - &th.lift(&parts.j))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RemainderReport {
    pub norm: f64,
    pub envelope_pos: f64,
    pub envelope_nonneg: f64,
}

pub fn envelopes(cstar: f64, tau2: f64, s: f64) -> (f64, f64) {
    let decay = (-0.5 * cstar * tau2 * s).exp();
    (decay / s, decay / (s + 1.0))
}

/// ‖e^{-B s} − Φ e^{-L s} Φ* − K‖ together with its reference envelopes.
pub fn exponential_remainder(gram: &GramForm, th: &ThresholdData, t: f64, eps: f64, s: f64) -> Result<RemainderReport> {
    let tau = (t * t + eps * eps).sqrt();
    if tau > th.tau0 {
        return Err(HomogError::OutsideThresholdBall { tau, tau0: th.tau0 });
    }
    let rem = remainder_matrix(gram, th, t, eps, s)?;
    let (envelope_pos, envelope_nonneg) = envelopes(th.cstar_effective(), tau * tau, s);
    Ok(RemainderReport { norm: norm2(&rem), envelope_pos, envelope_nonneg })
}

pub fn remainder_matrix(gram: &GramForm, th: &ThresholdData, t: f64, eps: f64, s: f64) -> Result<CMat> {
    let parts = corrector_parts(th, t, eps, s)?;
    let w = &rscaled(&th.zc, t) + &rscaled(&th.ztc, eps);
    let a = &w * &parts.e * th.phi.adjoint();
    let k = &plus_adj(&a) - &th.lift(&parts.j);
    let full = expm_neg(&gram.b_matrix(t, eps), s);
    Ok(&(&full - &th.lift(&parts.e)) - &k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstract_engine::family::AbstractFamily;
    use crate::abstract_engine::threshold::ThresholdParams;
    use crate::quad::integrate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64, dim: usize, n: usize) -> (AbstractFamily, ThresholdData) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fam = AbstractFamily::random(dim, n, &mut rng);
        let th = ThresholdData::from_family(&fam, &ThresholdParams::default()).unwrap();
        (fam, th)
    }

    #[test]
    fn corrector_at_zero_time() {
        let (_, th) = setup(1, 6, 2);
        let (t, e) = (0.3 * th.tau0, 0.2 * th.tau0);
        let k = corrector_k(&th, t, e, 0.0).unwrap();
        let w = &rscaled(&th.z, t) + &rscaled(&th.ztilde, e);
        let expect = plus_adj(&(&w * &th.p));
        assert!((&k - &expect).norm_l2() < 1e-13);
        assert!(herm_defect(&k) < 1e-12);
    }

    #[test]
    fn duhamel_term_matches_quadrature() {
        let (_, th) = setup(3, 5, 1);
        let (t, e, s) = (0.5 * th.tau0, 0.4 * th.tau0, 3.0);
        let l = th.l_matrix(t, e);
        let nn = th.n_small(t, e);
        let (quad, _) = integrate(|u| &(&expm_neg(&l, s - u) * &nn) * &expm_neg(&l, u), 0.0, s, 1e-13);
        let parts = corrector_parts(&th, t, e, s).unwrap();
        assert!((&parts.j - &quad).norm_l2() < 1e-9);
    }

    #[test]
    fn remainder_decays_in_s() {
        let (fam, th) = setup(5, 6, 2);
        let g = fam.gram();
        let (t, e) = (0.6 * th.tau0, 0.6 * th.tau0);
        let mut last = f64::INFINITY;
        for s in [1.0, 10.0, 100.0, 1e3, 1e4, 1e5] {
            let r = exponential_remainder(&g, &th, t, e, s).unwrap().norm;
            assert!(r <= last + 1e-12);
            last = r;
        }
    }

    #[test]
    fn outside_ball_is_rejected() {
        let (fam, th) = setup(5, 6, 2);
        let err = exponential_remainder(&fam.gram(), &th, th.tau0, th.tau0, 1.0).unwrap_err();
        assert!(matches!(err, HomogError::OutsideThresholdBall { .. }));
    }
}
