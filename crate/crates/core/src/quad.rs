//! Adaptive Gauss–Kronrod (7/15) quadrature for matrix-valued integrands.

use crate::linalg::*;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

fn gk15(f: &impl Fn(f64) -> CMat, a: f64, b: f64) -> (CMat, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = rscaled(&fc, WGK[7]);
    let mut gauss = rscaled(&fc, WG[3]);
    for j in 0..7 {
        let x = h * XGK[j];
        let s = &f(c - x) + &f(c + x);
        kron = &kron + &rscaled(&s, WGK[j]);
        if j % 2 == 1 {
            gauss = &gauss + &rscaled(&s, WG[j / 2]);
        }
    }
    let kron = rscaled(&kron, h);
    let err = (&kron - &rscaled(&gauss, h)).norm_l2();
    (kron, err)
}

/// ∫_a^b f, bisecting until each panel's Kronrod/Gauss gap is below its
/// share of `tol` (absolute, Frobenius norm).
pub fn integrate(f: impl Fn(f64) -> CMat, a: f64, b: f64, tol: f64) -> (CMat, f64) {
    let mut stack = vec![(a, b, 0usize)];
    let mut total: Option<CMat> = None;
    let mut err = 0.0;
    let len = (b - a).abs().max(f64::MIN_POSITIVE);
    while let Some((lo, hi, depth)) = stack.pop() {
        let (v, e) = gk15(&f, lo, hi);
        let share = tol * (hi - lo).abs() / len;
        if e <= share || depth >= 40 {
            err += e;
            total = Some(match total {
                None => v,
                Some(t) => &t + &v,
            });
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((lo, mid, depth + 1));
            stack.push((mid, hi, depth + 1));
        }
    }
    (total.unwrap_or_else(|| zeros(0, 0)), err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> CMat {
        let mut m = zeros(1, 1);
        m[(0, 0)] = cr(v);
        m
    }

    #[test]
    fn weights_integrate_polynomials() {
        for k in 0..=22 {
            let (v, _) = gk15(&|x| scalar(x.powi(k)), -1.0, 1.0);
            let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            assert!((v[(0, 0)].re - exact).abs() < 1e-14, "k={k}");
        }
    }

    #[test]
    fn adaptive_exponential() {
        let (v, _) = integrate(|x| scalar((-30.0 * x).exp()), 0.0, 2.0, 1e-13);
        let exact = (1.0 - (-60.0f64).exp()) / 30.0;
        assert!((v[(0, 0)].re - exact).abs() < 1e-13);
    }
}
