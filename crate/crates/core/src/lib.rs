//! Numerical laboratory for coupled multi-population dynamics.
//!
//! Agents carry a position in `R^d` and a probability vector over a finite
//! label set. Positions follow kernel-driven nonlocal velocities, label
//! probabilities follow a state-dependent Markov generator. The crate provides
//!
//! * state-space types and exact measure metrics (Wasserstein-1 and
//!   bounded-Lipschitz, both solved as exact transport problems),
//! * interaction-kernel and transition-rate families with computable
//!   regularity constants,
//! * a splitting integrator for the N-agent system (explicit transport,
//!   exact stochastic-matrix label step),
//! * a quadrature bridge from continuum label games to the finite-label model,
//! * a 1-D finite-volume solver for the macroscopic density system.

pub mod engine;
pub mod error;
pub mod exec;
pub mod games;
pub mod kernels;
pub mod measures;
pub mod metrics;
pub mod pde;
mod transport;

pub use error::{Error, Result};

/// Formats a float with 17 significant digits, enough to round-trip `f64`.
/// All CSV output goes through this so reports are byte-reproducible.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
