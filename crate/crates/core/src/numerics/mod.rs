//! Numerical building blocks: real-line quadrature, damped Newton root
//! finding, robust preliminary location and scale.

mod newton;
mod quadrature;
mod robust;

pub use newton::{newton_solve, NewtonOutcome, SolverConfig};
pub use quadrature::{integrate, integrate_vec, GaussianFactor, QuadratureSpec, ScaleHint};
pub use robust::{mad_scale, median, MAD_CONSISTENCY};
