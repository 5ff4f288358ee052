//! Nonsmooth stochastic subgradient descent laboratory.
//!
//! The crate is `no_std` (with `alloc`) and purely algorithmic:
//!
//! - [`geometry`]: manifolds, projections, tangent projectors, Riemannian
//!   gradient/Hessian and subspace aperture.
//! - [`functions`]: piecewise-smooth functions on sign-pattern regions with
//!   exact Clarke-subdifferential generators, tilts and a catalog.
//! - [`hull`]: minimum-norm point of a convex hull of finitely many points.
//! - [`conditions`]: sampled certifiers for sharpness, angle, Verdier and weak
//!   convexity, the critical-point classifier and the APT gap demo.
//! - [`sgd`]: step schedules, noise models, the subgradient recursion and
//!   Monte Carlo escape statistics.
//! - [`dynamics`]: manifold decomposition of trajectories, Robbins–Monro
//!   residuals, drift probes and rate diagnostics.
//! - [`center_stable`]: spectral split, Lyapunov certificates, constructed
//!   systems with known center-stable manifold and the `U_n` process.
//!
//! IO, configuration and parallel orchestration live in the `saddlescape`
//! companion crate.

#![no_std]
#![forbid(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod center_stable;
pub mod conditions;
pub mod dynamics;
pub mod functions;
pub mod geometry;
pub mod hull;
pub mod linalg;
pub mod rng;
pub mod sgd;

pub use linalg::{Matrix, Vector};
