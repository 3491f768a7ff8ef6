//! Numerical laboratory for exponential-integrator diffusion samplers.
//!
//! The crate builds everything needed to study, at desk scale and with exact
//! oracles, the generator that alternates a reverse probability-flow-ODE step
//! with a short forward noising step, next to its reverse-SDE and pure-ODE
//! siblings:
//!
//! - [`process`] — the forward Ornstein-Uhlenbeck process, its rescaled
//!   variant, and the exponentially decaying time grids shared by all
//!   samplers.
//! - [`oracle`] — exact score fields (value, Jacobian, Laplacian) for
//!   Gaussian mixtures and finite supports, controlled score perturbations,
//!   and exact affine-Gaussian law propagation through each sampler.
//! - [`sampler`] — the ODE-step-then-noise generator, the
//!   exponential-integrator reverse-SDE baseline, and the pure
//!   probability-flow sampler, all deterministic given a seed.
//! - [`metrics`] — closed-form Gaussian divergences, empirical fits,
//!   a k-nearest-neighbor KL estimator, and rate-exponent fitting.
//! - [`validator`] — numerical verification of the score-calculus identities
//!   and moment bounds the samplers' error analysis rests on.

pub mod metrics;
pub mod numeric;
pub mod oracle;
pub mod process;
pub mod rng;
pub mod sampler;
pub mod validator;
