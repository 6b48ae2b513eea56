use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::field::{Field, Grid};
use crate::error::{HomogError, Result};
use crate::lattice::Lattice;
use crate::linalg::*;

pub type CoefFn = Arc<dyn Fn(&[f64]) -> CMat + Send + Sync>;

/// A periodic coefficient, either in closed form (as a function of reduced
/// coordinates y ∈ [0,1)^d) or as grid samples.
#[derive(Clone)]
pub enum Coef {
    Func { rows: usize, cols: usize, f: CoefFn },
    Samples(Field),
}

impl fmt::Debug for Coef {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coef::Func { rows, cols, .. } => write!(fm, "Coef::Func({rows}x{cols})"),
            Coef::Samples(field) => write!(fm, "Coef::Samples({:?}, {}x{})", field.grid.shape, field.rows, field.cols),
        }
    }
}

impl Coef {
    pub fn func(rows: usize, cols: usize, f: impl Fn(&[f64]) -> CMat + Send + Sync + 'static) -> Coef {
        Coef::Func { rows, cols, f: Arc::new(f) }
    }

    pub fn constant(value: CMat) -> Coef {
        let (rows, cols) = (value.nrows(), value.ncols());
        Coef::func(rows, cols, move |_| value.clone())
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Coef::Func { rows, cols, .. } => (*rows, *cols),
            Coef::Samples(f) => (f.rows, f.cols),
        }
    }

    pub fn sample(&self, grid: &Grid) -> Field {
        match self {
            Coef::Func { rows, cols, f } => Field::from_fn(grid, *rows, *cols, |y| f(y)),
            Coef::Samples(field) => field.resample(grid),
        }
    }
}

/// One Fourier term `c e^{2πi q·y}` of a matrix coefficient.
#[derive(Clone, Debug)]
pub struct Harmonic {
    pub q: Vec<i64>,
    pub c: CMat,
}

/// `base + Σ (c e^{2πi q·y} + c* e^{-2πi q·y})` when `hermitian`, otherwise
/// `base + Σ c e^{2πi q·y}`.
pub fn harmonic_coef(base: CMat, terms: Vec<Harmonic>, hermitian: bool) -> Coef {
    let (rows, cols) = (base.nrows(), base.ncols());
    Coef::func(rows, cols, move |y| {
        let mut out = base.clone();
        for h in &terms {
            let ph: f64 = 2.0 * PI * h.q.iter().zip(y).map(|(q, y)| *q as f64 * y).sum::<f64>();
            let e = cplx(ph.cos(), ph.sin());
            out = &out + &scaled(&h.c, e);
            if hermitian {
                out = &out + &scaled(&adj(&h.c), e.conj());
            }
        }
        out
    })
}

#[derive(Clone, Debug)]
pub struct PeriodicProblem {
    pub name: String,
    pub lattice: Lattice,
    pub n: usize,
    pub m: usize,
    /// b(ξ) = Σ_j b[j] ξ_j, each m×n.
    pub b: Vec<CMat>,
    pub g: Coef,
    pub f: Coef,
    pub a: Vec<Coef>,
    pub qdens: Coef,
    pub lambda: f64,
}

/// Points on the unit sphere of ℝ^d used to sample symbol bounds.
pub fn sphere_samples(d: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..720).map(|k| {
            let a = PI * k as f64 / 360.0;
            vec![a.cos(), a.sin()]
        })
        .collect(),
        _ => {
            let n = 4000;
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let a = golden * k as f64;
                    vec![r * a.cos(), r * a.sin(), z]
                })
                .collect()
        }
    }
}

impl PeriodicProblem {
    pub fn d(&self) -> usize {
        self.lattice.d
    }

    pub fn b_symbol(&self, xi: &[f64]) -> CMat {
        let mut out = zeros(self.m, self.n);
        for (bj, &x) in self.b.iter().zip(xi) {
            out = &out + &rscaled(bj, x);
        }
        out
    }

    /// min and max of the eigenvalues of b(θ)*b(θ) over sampled unit θ.
    pub fn alphas(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for th in sphere_samples(self.d()) {
            let b = self.b_symbol(&th);
            let v = eigvalsh(&(b.adjoint() * &b));
            lo = lo.min(v[0]);
            hi = hi.max(*v.last().unwrap());
        }
        (lo, hi)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.d();
        if self.b.len() != d || self.a.len() != d {
            return Err(HomogError::InvalidInput(format!("expected {d} symbol matrices and {d} first-order coefficients")));
        }
        if self.m < self.n {
            return Err(HomogError::InvalidInput(format!("m = {} < n = {}", self.m, self.n)));
        }
        for bj in &self.b {
            if bj.nrows() != self.m || bj.ncols() != self.n {
                return Err(HomogError::InvalidInput("symbol matrices must be m×n".into()));
            }
        }
        let checks = [("g", self.g.shape(), self.m), ("f", self.f.shape(), self.n), ("Q", self.qdens.shape(), self.n)];
        for (name, (r, c), want) in checks {
            if r != want || c != want {
                return Err(HomogError::InvalidInput(format!("{name} has shape {r}x{c}, expected {want}x{want}")));
            }
        }
        for a in &self.a {
            if a.shape() != (self.n, self.n) {
                return Err(HomogError::InvalidInput("first-order coefficients must be n×n".into()));
            }
        }
        if self.alphas().0 <= 1e-12 {
            return Err(HomogError::InvalidInput("b(θ) loses rank for some direction θ".into()));
        }
        let grid = Grid::new(vec![16; d]);
        let g = self.g.sample(&grid);
        for v in &g.vals {
            if herm_defect(v) > 1e-10 * (1.0 + v.norm_l2()) || min_eig(v) <= 0.0 {
                return Err(HomogError::InvalidInput("g is not Hermitian positive definite on the sample grid".into()));
            }
        }
        for v in &self.f.sample(&grid).vals {
            if v.singular_values().last().copied().unwrap_or(0.0) <= 1e-12 {
                return Err(HomogError::InvalidInput("f is not invertible on the sample grid".into()));
            }
        }
        for v in &self.qdens.sample(&grid).vals {
            if herm_defect(v) > 1e-10 * (1.0 + v.norm_l2()) {
                return Err(HomogError::InvalidInput("Q density is not Hermitian".into()));
            }
        }
        Ok(())
    }

    /// Constant coefficients g = g0, f = I, a_j = 0, Q = 0, with b(D) = D.
    pub fn constant(d: usize, g0: CMat, lambda: f64) -> PeriodicProblem {
        let m = g0.nrows();
        assert_eq!(m, d, "constant preset uses b(D) = D with n = 1");
        let b = (0..d).map(|j| CMat::from_fn(d, 1, |i, _| if i == j { ONE } else { ZERO })).collect();
        PeriodicProblem {
            name: "constant".into(),
            lattice: Lattice::cubic(d),
            n: 1,
            m: d,
            b,
            g: Coef::constant(g0),
            f: Coef::constant(eye(1)),
            a: (0..d).map(|_| Coef::constant(zeros(1, 1))).collect(),
            qdens: Coef::constant(zeros(1, 1)),
            lambda,
        }
    }

    /// d = 1, b(D) = D, g = 2 + cos 2πx, everything else trivial.
    pub fn harmonic_mean_1d() -> PeriodicProblem {
        let one = |v: f64| CMat::from_fn(1, 1, |_, _| cr(v));
        PeriodicProblem {
            name: "harmonic_mean_1d".into(),
            lattice: Lattice::cubic(1),
            n: 1,
            m: 1,
            b: vec![one(1.0)],
            g: harmonic_coef(one(2.0), vec![Harmonic { q: vec![1], c: one(0.5) }], true),
            f: Coef::constant(eye(1)),
            a: vec![Coef::constant(zeros(1, 1))],
            qdens: Coef::constant(zeros(1, 1)),
            lambda: 1.0,
        }
    }

    /// d = 1 with oscillating g, f, a and Q, so that every corrector term
    /// is active.
    pub fn oscillatory_1d() -> PeriodicProblem {
        let one = |re: f64, im: f64| CMat::from_fn(1, 1, |_, _| cplx(re, im));
        let g = harmonic_coef(
            one(2.0, 0.0),
            vec![Harmonic { q: vec![1], c: one(0.6, 0.0) }, Harmonic { q: vec![2], c: one(0.0, 0.2) }],
            true,
        );
        let f = harmonic_coef(one(1.0, 0.0), vec![Harmonic { q: vec![1], c: one(0.15, 0.05) }], true);
        let a = harmonic_coef(one(0.1, 0.3), vec![Harmonic { q: vec![1], c: one(0.2, -0.1) }, Harmonic { q: vec![-2], c: one(0.0, 0.15) }], false);
        let q = harmonic_coef(one(0.2, 0.0), vec![Harmonic { q: vec![1], c: one(0.3, 0.2) }], true);
        PeriodicProblem {
            name: "oscillatory_1d".into(),
            lattice: Lattice::cubic(1),
            n: 1,
            m: 1,
            b: vec![one(1.0, 0.0)],
            g,
            f,
            a: vec![a],
            qdens: q,
            lambda: 1.0,
        }
    }

    /// d = 2, n = 1, b(D) = D and g = diag(g11(x2), g22(x1)): both columns of
    /// g are divergence free, a_j are constant.
    pub fn zero_corrector_2d() -> PeriodicProblem {
        let g = Coef::func(2, 2, |y| {
            let mut m = zeros(2, 2);
            m[(0, 0)] = cr(1.5 + 0.7 * (2.0 * PI * y[1]).cos());
            m[(1, 1)] = cr(2.0 + 0.5 * (2.0 * PI * y[0]).sin() + 0.3 * (4.0 * PI * y[0]).cos());
            m
        });
        let b = (0..2).map(|j| CMat::from_fn(2, 1, |i, _| if i == j { ONE } else { ZERO })).collect();
        let c = |re: f64, im: f64| CMat::from_fn(1, 1, |_, _| cplx(re, im));
        PeriodicProblem {
            name: "zero_corrector_2d".into(),
            lattice: Lattice::cubic(2),
            n: 1,
            m: 2,
            b,
            g,
            f: Coef::constant(eye(1)),
            a: vec![Coef::constant(c(0.3, 0.2)), Coef::constant(c(-0.1, 0.4))],
            qdens: Coef::constant(c(0.5, 0.0)),
            lambda: 1.0,
        }
    }

    /// Random smooth coefficients with `harmonics` Fourier terms each
    /// (wave vectors in {−2..2}^d). λ is set from the positivity constants.
    pub fn random_smooth(d: usize, n: usize, m: usize, harmonics: usize, seed: u64) -> PeriodicProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wave = |rng: &mut ChaCha8Rng| loop {
            let q: Vec<i64> = (0..d).map(|_| rng.gen_range(-2..=2)).collect();
            if q.iter().any(|&v| v != 0) {
                return q;
            }
        };
        let terms = |rows: usize, cols: usize, amp: f64, rng: &mut ChaCha8Rng| -> Vec<Harmonic> {
            (0..harmonics)
                .map(|_| {
                    let q = wave(rng);
                    let c = random_complex(rows, cols, rng);
                    let s = amp / norm2(&c);
                    Harmonic { q, c: rscaled(&c, s) }
                })
                .collect()
        };
        let gt = terms(m, m, 0.3 / harmonics.max(1) as f64, &mut rng);
        let g = harmonic_coef(eye(m), gt, true);
        let ft = terms(n, n, 0.12 / harmonics.max(1) as f64, &mut rng);
        let f = harmonic_coef(eye(n), ft, true);
        let a = (0..d)
            .map(|_| {
                let base = rscaled(&random_complex(n, n, &mut rng), 0.2);
                let t = terms(n, n, 0.2, &mut rng);
                harmonic_coef(base, t, false)
            })
            .collect();
        let qt = terms(n, n, 0.2, &mut rng);
        let qdens = harmonic_coef(rscaled(&random_hermitian(n, &mut rng), 0.2), qt, true);
        let b = loop {
            let b: Vec<CMat> = (0..d).map(|_| random_complex(m, n, &mut rng)).collect();
            let trial = PeriodicProblem {
                name: String::new(),
                lattice: Lattice::cubic(d),
                n,
                m,
                b: b.clone(),
                g: Coef::constant(eye(m)),
                f: Coef::constant(eye(n)),
                a: vec![],
                qdens: Coef::constant(zeros(n, n)),
                lambda: 0.0,
            };
            if trial.alphas().0 > 0.05 * trial.alphas().1 {
                break b;
            }
        };
        let mut p = PeriodicProblem {
            name: format!("random_smooth_d{d}_n{n}_m{m}_s{seed}"),
            lattice: Lattice::cubic(d),
            n,
            m,
            b,
            g,
            f,
            a,
            qdens,
            lambda: 0.0,
        };
        p.lambda = p.safe_lambda();
        p
    }

    /// Smallest λ (plus one) for which the positivity constant β is 1.
    pub fn safe_lambda(&self) -> f64 {
        let mut probe = self.clone();
        probe.lambda = 0.0;
        let c = super::constants::DoConstants::compute(&probe, &Grid::new(vec![32; self.d()]));
        (c.c0 + c.c4).max(0.0) * c.f_inv_sup * c.f_inv_sup + 1.0
    }
}
