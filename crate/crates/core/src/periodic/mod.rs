//! Periodic differential operators: coefficients, fiber matrices, cell
//! problems and effective characteristics.

pub mod cell;
pub mod constants;
pub mod crossval;
pub mod fiber;
pub mod field;
pub mod ng;
pub mod problem;

pub use cell::{CellFields, CellOptions, CellSolution};
pub use constants::DoConstants;
pub use fiber::{FiberExpansion, FiberSystem};
pub use field::{Field, Grid, Modes, Spectrum};
pub use problem::{Coef, Harmonic, PeriodicProblem};
pub use crossval::{cross_validate, CrossValidation};
pub use ng::{
    fiber_approximation, fiber_envelope, fiber_remainder, fiber_remainder_unchecked, zone_grid, EnvelopeReport, EnvelopeRow, FiberApproximation,
    FiberRemainder, NgCoefficients,
};
