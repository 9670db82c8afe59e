//! Asymptotic analysis of GSVD-based MIMO-NOMA downlinks over Rician fading.
//!
//! Two users share a base-station broadcast through the generalized singular
//! value decomposition of their channel pair {H1, H2}. Everything of interest
//! (per-user average rates, spectral densities) is a functional of the
//! generalized singular values (GSVs), and the GSVs are the eigenvalues of
//! `L = H1 (H2^H H2)^{-1} H1^H` once H2 has full column rank.
//!
//! The crate provides three independent routes to those functionals:
//!
//! * [`sampler`] — a Monte Carlo oracle that draws Rician channel
//!   realizations, extracts GSV spectra, and averages rate expressions
//!   directly.
//! * [`freedet`] — a deterministic-equivalent solver: a coupled fixed point
//!   on three scalar traces whose solution yields the Cauchy transform of
//!   the GSV spectrum for arbitrary line-of-sight means.
//! * [`rayleigh`] — closed forms for the zero-mean (Rayleigh) special case:
//!   Cauchy transform, its antiderivative, rates, and the spectral density.
//!
//! [`rates`] turns any Cauchy-transform evaluator into average user rates by
//! adaptive quadrature, and [`model`] holds the experiment configuration that
//! all three routes consume.

pub mod freedet;
pub mod model;
pub mod quad;
pub mod rates;
pub mod rayleigh;
pub mod sampler;

pub use model::{MeanSpec, Regime, SystemConfig};
pub use rates::{Method, RateReport};

/// Complex scalar used throughout the crate.
pub type C64 = num_complex::Complex<f64>;

/// Dense complex matrix used for channel and mean matrices.
pub type CMatrix = nalgebra::DMatrix<C64>;
