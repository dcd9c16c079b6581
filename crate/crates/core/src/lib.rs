//! Long-horizon sensitivity of optimal CRRA expected utility to the
//! risk-tolerance exponent `nu`.
//!
//! The expected utility of an investor with power utility `x^nu / nu` reduces,
//! for a constant short rate, to a Feynman–Kac expectation
//! `p_T = E[exp(-∫ q θ'θ(X_s) ds)]` over a scalar state diffusion. Writing
//! `p_T = φ(ξ) e^{-λT} f(T, ξ)` with a positive eigenpair `(λ, φ)` of the
//! killed generator isolates the exponential decay; the remainder `f` has a
//! finite limit, so `(1/T) ∂_ν ln p_T → -∂λ/∂ν` at rate `c/T`.
//!
//! The crate provides:
//!
//! * [`models`]: the five model families, parameter validation, and the
//!   pricing-measure and eigen-measure dynamics;
//! * [`eigen`]: closed-form eigenpairs, remainder functions and their limits,
//!   `∂λ/∂ν`, and the utility asymptotics;
//! * [`specialfn`]: log-Gamma, Kummer's `₁F₁` and the closed-form moments the
//!   remainder functions need;
//! * [`simulate`]: exact and discretised path samplers, first-variation
//!   processes and pathwise sensitivity weights;
//! * [`estimate`]: Monte Carlo estimators, finite-difference sensitivities
//!   with common random numbers and the long-horizon convergence study.
//!
//! Path generation runs on rayon when the `parallel` feature is enabled
//! (the default). Every path draws from its own counter-based stream, so
//! results do not depend on the number of worker threads.

pub mod eigen;
pub mod error;
pub mod estimate;
pub mod models;
pub mod simulate;
pub mod specialfn;
pub mod stats;

pub use error::{Error, Result};
pub use models::{Family, MarketParams, ModelSpec};
