//! Asymptotic-preserving first-order-system least-squares (APFOS-LS) solver
//! for anisotropic elliptic equations.
//!
//! The anisotropic problem -lap_perp(phi) - (1/eps) lap_par(phi) = f loses
//! uniqueness as the anisotropy strength eps goes to zero. Rewriting it as a
//! first-order system in directional-gradient variables keeps it well posed
//! uniformly in eps >= 0. This crate discretizes the resulting least-squares
//! functionals over random collocation points, represents the unknowns with a
//! small fully-connected tanh network, and minimizes with L-BFGS or Adam. The
//! same machinery identifies an unknown eps from sampled solution values via
//! the reparameterization eps = exp(eps*).
//!
//! Modules follow the pipeline: [`tape`] (reverse-mode AD), [`jet`] (spatial
//! derivatives), [`network`], [`problem`] (fields, exact solutions, sampling),
//! [`loss`] (the discrete functionals), [`optim`], [`metrics`], and [`runner`]
//! (configuration, orchestration, artifacts).

pub mod gradcheck;
pub mod jet;
pub mod loss;
pub mod metrics;
pub mod network;
pub mod optim;
pub mod problem;
pub mod runner;
pub mod scalar;
pub mod tape;
