//! Thin helpers over faer for dense complex Hermitian work.

use faer::prelude::SpSolver;
use faer::Side;
use rand::Rng;
use rand_distr::StandardNormal;

pub use faer::complex_native::c64;
pub type CMat = faer::Mat<c64>;

pub const ZERO: c64 = c64 { re: 0.0, im: 0.0 };
pub const ONE: c64 = c64 { re: 1.0, im: 0.0 };

#[inline]
pub fn cr(re: f64) -> c64 {
    c64::new(re, 0.0)
}

#[inline]
pub fn cplx(re: f64, im: f64) -> c64 {
    c64::new(re, im)
}

pub fn zeros(r: usize, c: usize) -> CMat {
    CMat::zeros(r, c)
}

pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn adj(a: &CMat) -> CMat {
    a.adjoint().to_owned()
}

pub fn scaled(a: &CMat, s: c64) -> CMat {
    faer::scale(s) * a
}

pub fn rscaled(a: &CMat, s: f64) -> CMat {
    faer::scale(cr(s)) * a
}

/// `a + a*`
pub fn plus_adj(a: &CMat) -> CMat {
    a + a.adjoint()
}

pub fn herm_part(a: &CMat) -> CMat {
    rscaled(&plus_adj(a), 0.5)
}

/// Frobenius norm of `a - a*`.
pub fn herm_defect(a: &CMat) -> f64 {
    (a - a.adjoint()).norm_l2()
}

pub fn max_abs(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            m = m.max(a[(i, j)].abs());
        }
    }
    m
}

/// Spectral norm. Exact singular values up to 512; above that the largest
/// eigenvalue of the smaller Gram matrix.
pub fn norm2(a: &CMat) -> f64 {
    let (r, c) = (a.nrows(), a.ncols());
    if r == 0 || c == 0 {
        return 0.0;
    }
    if r.min(c) <= 512 {
        return a.singular_values()[0];
    }
    let g = if r <= c { a * a.adjoint() } else { a.adjoint() * a };
    let (vals, _) = eigh(&g);
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Eigen-decomposition of the Hermitian part of `a`, eigenvalues ascending.
pub fn eigh(a: &CMat) -> (Vec<f64>, CMat) {
    if a.nrows() == 1 && a.ncols() == 1 {
        return (vec![a[(0, 0)].re], eye(1));
    }
    let h = herm_part(a);
    let e = h.selfadjoint_eigendecomposition(Side::Lower);
    let s = e.s().column_vector();
    let vals = (0..h.nrows()).map(|i| s.read(i).re).collect();
    (vals, e.u().to_owned())
}

pub fn eigvalsh(a: &CMat) -> Vec<f64> {
    eigh(a).0
}

pub fn min_eig(a: &CMat) -> f64 {
    eigvalsh(a).first().copied().unwrap_or(0.0)
}

pub fn max_eig(a: &CMat) -> f64 {
    eigvalsh(a).last().copied().unwrap_or(0.0)
}

/// `V diag(f(λ)) V*`.
pub fn fn_from_eig(vals: &[f64], vecs: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let n = vals.len();
    let mut w = vecs.clone();
    for j in 0..n {
        let fj = cr(f(vals[j]));
        for i in 0..vecs.nrows() {
            w[(i, j)] = w[(i, j)] * fj;
        }
    }
    &w * vecs.adjoint()
}

pub fn fn_herm(a: &CMat, f: impl Fn(f64) -> f64) -> CMat {
    let (v, u) = eigh(a);
    fn_from_eig(&v, &u, f)
}

/// `exp(-a s)` for Hermitian `a`.
pub fn expm_neg(a: &CMat, s: f64) -> CMat {
    fn_herm(a, |l| (-l * s).exp())
}

pub fn sqrt_hpd(a: &CMat) -> CMat {
    fn_herm(a, |l| l.max(0.0).sqrt())
}

pub fn inv_sqrt_hpd(a: &CMat) -> CMat {
    fn_herm(a, |l| 1.0 / l.sqrt())
}

pub fn inv(a: &CMat) -> CMat {
    let lu = a.partial_piv_lu();
    lu.solve(&eye(a.nrows()))
}

pub fn solve(a: &CMat, b: &CMat) -> CMat {
    a.partial_piv_lu().solve(b)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    CMat::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

pub fn random_complex<R: Rng + ?Sized>(r: usize, c: usize, rng: &mut R) -> CMat {
    let mut m = zeros(r, c);
    for j in 0..c {
        for i in 0..r {
            m[(i, j)] = cplx(rng.sample(StandardNormal), rng.sample(StandardNormal)) * cr(std::f64::consts::FRAC_1_SQRT_2);
        }
    }
    m
}

pub fn random_hermitian<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    herm_part(&random_complex(n, n, rng))
}

pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    random_complex(n, n, rng).qr().compute_q()
}

/// Weights of `∫_0^s e^{-λ_i (s-u)} e^{-λ_j u} du`, with the confluent limit
/// `s e^{-λ s}` when the two exponents agree to relative 1e-10.
pub fn duhamel_weight(li: f64, lj: f64, s: f64) -> f64 {
    let d = lj - li;
    let scale = li.abs().max(lj.abs());
    if d.abs() <= 1e-10 * scale || d == 0.0 {
        let l = 0.5 * (li + lj);
        return s * (-l * s).exp();
    }
    let (lo, gap) = if d > 0.0 { (li, d) } else { (lj, -d) };
    (-lo * s).exp() * (-(-gap * s).exp_m1()) / gap
}

/// `∫_0^s e^{-L(s-u)} N e^{-L u} du` with `L = U diag(λ) U*`.
pub fn duhamel_sandwich(vals: &[f64], vecs: &CMat, n: &CMat, s: f64) -> CMat {
    let nt = vecs.adjoint() * n * vecs;
    let k = vals.len();
    let j = CMat::from_fn(k, k, |a, b| nt[(a, b)] * cr(duhamel_weight(vals[a], vals[b], s)));
    vecs * &j * vecs.adjoint()
}

/// Orthonormal basis of the span of the columns of `a` (rank by relative tol).
pub fn orth(a: &CMat, rel_tol: f64) -> CMat {
    let svd = a.thin_svd();
    let s = svd.s_diagonal();
    let smax = if s.nrows() > 0 { s.read(0).re } else { 0.0 };
    let r = (0..s.nrows()).filter(|&i| s.read(i).re > rel_tol * smax).count();
    svd.u().subcols(0, r).to_owned()
}

pub fn cols(a: &CMat, start: usize, count: usize) -> CMat {
    a.as_ref().subcols(start, count).to_owned()
}

pub fn block(a: &CMat, r0: usize, c0: usize, nr: usize, nc: usize) -> CMat {
    a.as_ref().submatrix(r0, c0, nr, nc).to_owned()
}
