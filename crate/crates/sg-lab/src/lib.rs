//! Numerical laboratory for stochastic-gradient (SG) identification of ARMAX
//! systems under weak, non-persistent excitation.
//!
//! The crate has three layers:
//!
//! 1. **Simulation and estimation** — [`model`] generates MIMO ARMAX traces
//!    with conditionally bounded noise; [`estimator`] runs the normalized SG
//!    recursion and its diagnostics.
//! 2. **Excitation design** — [`excitation`] constructs regressor sequences
//!    whose information-matrix condition number follows a prescribed
//!    `(log r_n)^alpha` growth profile, including the adversarial `alpha > 1`
//!    regime.
//! 3. **Contraction analysis** — [`transition`] tracks the products
//!    `(I - A_n) ... (I - A_k)` that govern estimator convergence;
//!    [`schedule`] places factorial block boundaries on the energy scale; and
//!    [`bounds`] evaluates per-block norm bounds, their certificates, and the
//!    divergence-criterion partial sums.
//!
//! Everything is backed by the small dense linear algebra in [`spectral`].
//! All randomness flows through caller-supplied seeded generators, so every
//! experiment is reproducible bit for bit.

// The dense kernels index rows/columns/lags explicitly so the code lines up
// with the subscripts in the accompanying derivations.
#![allow(clippy::needless_range_loop)]

pub mod bounds;
pub mod error;
pub mod estimator;
pub mod excitation;
pub mod model;
pub mod schedule;
pub mod spectral;
pub mod transition;

pub use error::{Error, Result};
