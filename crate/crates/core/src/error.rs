use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HomogError {
    #[error("kernel of X0 is trivial (n = 0)")]
    DegenerateKernel,
    #[error("ill-conditioned system: {0}")]
    IllConditioned(String),
    #[error("L(t,eps) has eigenvalue {min} below the lower bound {bound}")]
    NonPositiveL { min: f64, bound: f64 },
    #[error("tau = {tau} lies outside the threshold ball tau0 = {tau0}")]
    OutsideThresholdBall { tau: f64, tau0: f64 },
    #[error("spectral projector rank {rank} differs from kernel dimension {n}")]
    RankMismatch { rank: usize, n: usize },
    #[error("singular lattice basis (|det| = {0:e})")]
    SingularBasis(f64),
    #[error("fiber positivity violated: min eigenvalue {min} < bound {bound}")]
    PositivityViolation { min: f64, bound: f64 },
    #[error("effective operator not positive: min eigenvalue {min} < bound {bound}")]
    NonPositiveEffective { min: f64, bound: f64 },
    #[error("mismatch in {object}: {value:e} exceeds tolerance {tol:e}")]
    MismatchBeyondTolerance { object: String, value: f64, tol: f64 },
    #[error("no-smoothing corrector requires s >= eps^2 (s = {s}, eps = {eps})")]
    RegimeViolation { s: f64, eps: f64 },
    #[error("quadrature under-resolved: step halving changed result by {0:e}")]
    QuadratureUnderResolved(f64),
    #[error("series needs at least 3 points, got {0}")]
    InsufficientDecades(usize),
    #[error("mean of v is {0:e}, expected zero")]
    MeanNotZero(f64),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, HomogError>;
