//! Discrete flow matching over continuous-time Markov chains.
//!
//! The crate is organised bottom-up:
//!
//! - [`pmf`]: alphabets, probability mass functions, joint tables and token metrics.
//! - [`paths`]: schedulers, source families and conditional probability paths with
//!   exact time derivatives.
//! - [`velocity`]: flux and rate-matrix algebra, the kinetic-optimal flux families,
//!   corrector (probability-preserving) fluxes and marginal velocities.
//! - [`posterior`]: exact and trainable tabular factorized posteriors.
//! - [`sampler`]: CTMC simulation (Euler and always-valid steps).
//! - [`elbo`]: ELBO integrands, Monte-Carlo estimators and a Kolmogorov-equation
//!   likelihood oracle.
//! - [`datasets`]: seeded toy targets.
//!
//! Token indices are 0-based everywhere. Joint states are stored as `&[usize]`
//! with coordinate 0 varying fastest in flattened tables.

pub mod datasets;
pub mod elbo;
mod error;
pub mod paths;
pub mod pmf;
pub mod posterior;
pub mod rng;
pub mod sampler;
pub mod velocity;


pub use error::{Error, Result};
