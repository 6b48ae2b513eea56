//! Numerical engine for periodic parabolic homogenization: threshold
//! approximations of operator pencils, fiber operators of periodic
//! differential operators, effective models, correctors and the
//! evolution comparisons built on them.

pub mod abstract_engine;
pub mod error;
pub mod evolution;
pub mod fit;
pub mod io;
pub mod lattice;
pub mod linalg;
pub mod periodic;
pub mod quad;
pub mod scalar;

pub use error::{HomogError, Result};
