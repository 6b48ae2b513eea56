use super::corrector::{envelopes, remainder_matrix};
use super::family::GramForm;
use super::threshold::{germ_blocks, n_blocks, solve_z_pair, Kernel, ThresholdData, ThresholdParams};
use crate::error::{HomogError, Result};
use crate::linalg::*;

/// Hatted family (Q0 = I) together with an isomorphism M. The family seen
/// by the flow is `x_ab -> M* x_ab M`, `Q0 = M*M`.
#[derive(Clone, Debug)]
pub struct BorderedFamily {
    pub base: GramForm,
    pub m: CMat,
}

/// Threshold data of the bordered problem, all in the kernel basis Φ̂ of
/// the hatted family.
#[derive(Clone, Debug)]
pub struct BorderedThreshold {
    pub hat: ThresholdData,
    pub g: CMat,
    pub m0: CMat,
    pub zc_g: CMat,
    pub ztc_g: CMat,
    pub n_blocks_g: [CMat; 4],
}

#[derive(Clone, Debug)]
pub struct BorderedReport {
    pub norm: f64,
    pub full_pipeline_norm: f64,
    pub mismatch: f64,
    pub envelope_pos: f64,
    pub envelope_nonneg: f64,
}

impl BorderedFamily {
    pub fn full(&self) -> GramForm {
        self.base.bordered(&self.m)
    }

    pub fn threshold(&self, params: &ThresholdParams) -> Result<BorderedThreshold> {
        self.threshold_with_kernel(params, None)
    }

    /// As `threshold`, with a known kernel basis of the hatted family.
    pub fn threshold_with_kernel(&self, params: &ThresholdParams, kernel: Option<Kernel>) -> Result<BorderedThreshold> {
        let ker = match kernel {
            Some(k) => k,
            None => Kernel::from_gram(&self.base.x00, params.kernel_rel_tol)?,
        };
        let (zc, ztc) = solve_z_pair(&self.base, &ker, params.cond_cap)?;
        let hat = ThresholdData::from_gram(&self.base, Some(ker), params)?;
        let g = inv(&(&self.m * self.m.adjoint()));
        let g = herm_part(&g);
        let phi = &hat.phi;
        let gn = phi.adjoint() * &g * phi;
        let proj = &(phi * inv(&gn)) * (phi.adjoint() * &g);
        let zc_g = &zc - &(&proj * &zc);
        let ztc_g = &ztc - &(&proj * &ztc);
        let mut unit = self.base.clone();
        unit.q0 = eye(self.base.dim());
        let (s, _, _) = germ_blocks(&unit, phi, &zc_g, &ztc_g);
        if (&s - &hat.s).norm_l2() > 1e-8 * (1.0 + hat.s.norm_l2()) {
            return Err(HomogError::MismatchBeyondTolerance {
                object: "bordered germ".into(),
                value: (&s - &hat.s).norm_l2(),
                tol: 1e-8,
            });
        }
        let n_blocks_g = n_blocks(&unit, phi, &zc_g, &ztc_g);
        Ok(BorderedThreshold { m0: inv_sqrt_hpd(&gn), hat, g, zc_g, ztc_g, n_blocks_g })
    }
}

impl BorderedThreshold {
    pub fn n_small(&self, t: f64, eps: f64) -> CMat {
        let [n11, n12, n21, n22] = &self.n_blocks_g;
        let mut a = rscaled(n11, t * t * t);
        a = &a + &rscaled(n12, t * t * eps);
        a = &a + &rscaled(n21, t * eps * eps);
        &a + &rscaled(n22, eps * eps * eps)
    }

    /// Principal term and corrector K_G, both on the full space.
    pub fn approximation(&self, t: f64, eps: f64, s: f64) -> (CMat, CMat) {
        let phi = &self.hat.phi;
        let h = &(&self.m0 * &self.hat.l_matrix(t, eps)) * &self.m0;
        let (vals, vecs) = eigh(&h);
        let e = fn_from_eig(&vals, &vecs, |x| (-x * s).exp());
        let nn = &(&self.m0 * &self.n_small(t, eps)) * &self.m0;
        let j = duhamel_sandwich(&vals, &vecs, &nn, s);
        let mem = &(&self.m0 * &e) * &self.m0;
        let principal = &(phi * &mem) * phi.adjoint();
        let w = &rscaled(&self.zc_g, t) + &rscaled(&self.ztc_g, eps);
        let k = &plus_adj(&(&(&w * &mem) * phi.adjoint())) - &(&(phi * &(&(&self.m0 * &j) * &self.m0)) * phi.adjoint());
        (principal, k)
    }
}

/// ‖M e^{-Bs} M* − M0-principal term − K_G‖, alongside ‖M ℛ M*‖ from the
/// unbordered pipeline run on the full family.
pub fn bordered_remainder(bf: &BorderedFamily, params: &ThresholdParams, t: f64, eps: f64, s: f64) -> Result<BorderedReport> {
    let bt = bf.threshold(params)?;
    let full = bf.full();
    let b = full.b_matrix(t, eps);
    let sand = &(&bf.m * &expm_neg(&b, s)) * bf.m.adjoint();
    let (principal, k) = bt.approximation(t, eps, s);
    let rem = &(&sand - &principal) - &k;
    let th_full = ThresholdData::from_gram(&full, None, params)?;
    let r_full = remainder_matrix(&full, &th_full, t, eps, s)?;
    let conj = &(&bf.m * &r_full) * bf.m.adjoint();
    let tau2 = t * t + eps * eps;
    let (envelope_pos, envelope_nonneg) = envelopes(bt.hat.cstar_effective(), tau2, s);
    Ok(BorderedReport {
        norm: norm2(&rem),
        full_pipeline_norm: norm2(&conj),
        mismatch: norm2(&(&rem - &conj)),
        envelope_pos,
        envelope_nonneg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abstract_engine::family::AbstractFamily;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn hat_family(seed: u64) -> GramForm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fam = AbstractFamily::random(6, 2, &mut rng);
        fam.q0 = eye(6);
        fam.gram()
    }

    fn params() -> ThresholdParams {
        ThresholdParams { tau0: Some(1.0), ..Default::default() }
    }

    #[test]
    fn identity_border_reduces_to_plain_remainder() {
        let base = hat_family(31);
        let bf = BorderedFamily { base: base.clone(), m: eye(6) };
        let r = bordered_remainder(&bf, &params(), 0.05, 0.04, 2.0).unwrap();
        let th = ThresholdData::from_gram(&base, None, &params()).unwrap();
        let plain = norm2(&remainder_matrix(&base, &th, 0.05, 0.04, 2.0).unwrap());
        assert!((r.norm - plain).abs() < 1e-12);
    }

    #[test]
    fn bordered_identity_matches_full_pipeline() {
        let base = hat_family(32);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m = &eye(6) + &rscaled(&random_complex(6, 6, &mut rng), 0.3);
        let bf = BorderedFamily { base, m };
        for &(t, e, s) in &[(0.05, 0.03, 1.0), (0.02, 0.05, 5.0)] {
            let r = bordered_remainder(&bf, &params(), t, e, s).unwrap();
            assert!(r.mismatch < 1e-10, "{} {} {}", r.norm, r.full_pipeline_norm, r.mismatch);
        }
    }

    #[test]
    fn scalar_border_scales_by_square() {
        let base = hat_family(33);
        let one = bordered_remainder(&BorderedFamily { base: base.clone(), m: eye(6) }, &params(), 0.04, 0.04, 1.0).unwrap();
        let c = 1.7;
        let scaled = bordered_remainder(&BorderedFamily { base, m: rscaled(&eye(6), c) }, &params(), 0.04, 0.04, 1.0 / (c * c)).unwrap();
        assert!((scaled.norm - c * c * one.norm).abs() < 1e-10);
    }
}
