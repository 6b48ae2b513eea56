//! Threshold approximations for a finite-dimensional operator pencil
//! B(t, ε): kernel, germ, third-order terms, corrector and remainders.

pub mod bordered;
pub mod checks;
pub mod corrector;
pub mod family;
pub mod threshold;

pub use bordered::{bordered_remainder, BorderedFamily, BorderedReport, BorderedThreshold};
pub use checks::{m_decomposition_check, threshold_projector_checks, MDecompositionReport, ProjectorReport};
pub use corrector::{corrector_k, exponential_remainder, RemainderReport};
pub use family::{AbstractFamily, FormConstants, GramForm};
pub use threshold::{kernel_projection, Kernel, ThresholdData, ThresholdParams};
