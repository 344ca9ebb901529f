//! Spectral simulation and numerical verification for linear SPDEs
//!
//! `du = (L_ψ(t)u + f) dt + g δβ_t` on a periodic grid, driven by a
//! Hilbert-space-valued Q-Gaussian process with a general temporal covariance
//! kernel `R(t, s)`.
//!
//! Module map, bottom-up:
//!
//! * [`symbols`]: symbol specifications and multiplier-condition checkers.
//! * [`spectral`]: grids, fields, Fourier transforms, pseudo-differential
//!   operators, Bessel lifts and the evolution operator `T_ψ(t, s)`.
//! * [`covariance`]: the built-in kernels, rectangle increments, Gram matrices
//!   and the integral operator `K_R`.
//! * [`gaussian`]: path sampling and Wiener integrals of step functions.
//! * [`malliavin`]: cylinder functionals, Malliavin derivatives and Skorohod
//!   integrals of elementary processes.
//! * [`solver`]: the mild solution with two stochastic-convolution estimators.
//! * [`verify`]: ratio checks for the inequalities.
//! * [`cli`]: configuration parsing and the batch front-end.

pub mod cli;
pub mod covariance;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod linalg;
pub mod malliavin;
pub mod rng;
pub mod solver;
pub mod spectral;
pub mod stats;
pub mod symbols;
pub mod verify;

pub use error::{Error, Result};
