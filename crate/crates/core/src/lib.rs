//! Core library for a finite-volume simulator of a nonlocal
//! Cahn-Hilliard-Brinkman system.
//!
//! The model couples a convective nonlocal Cahn-Hilliard equation with a
//! singular (logarithmic-type) potential and degenerate mobility,
//!
//! ```text
//!   dphi/dt + div(u phi) = div( m(phi) grad(mu) ),
//!   mu = a(x) phi - J*phi + F'(phi),
//! ```
//!
//! to a Brinkman flow problem for the volume-averaged velocity,
//!
//! ```text
//!   -div( nu(phi) grad(u) ) + eta u + grad(pi) = mu grad(phi) + h,
//!   div(u) = 0,
//! ```
//!
//! on a rectangle with no-flux and no-slip boundary conditions.  Here `J` is
//! an even convolution kernel and `a = J*1` its local mass.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`] - cell-centered scalars and MAC staggered vectors with the
//!   adjoint gradient/divergence pair;
//! * [`material`] - potentials, mobilities, the regularizing coefficient
//!   `lambda = m F''`, entropy functions, and assumption validators;
//! * [`kernel`] - FFT-based nonlocal convolutions with a direct-sum oracle;
//! * [`chsolver`] - the semi-implicit phase-field step in regularized flux
//!   form with exact mass conservation;
//! * [`brinkman`] - the staggered Uzawa solver for the flow subproblem;
//! * [`diagnostics`] - per-step scalar records and trend checks for the
//!   dissipative estimates;
//! * [`degiorgi`] - the iterative level-set machinery that certifies strict
//!   separation of the phase field from the pure phases;
//! * [`config`], [`sim`], [`io`], [`mms`] - run configuration, the coupled
//!   time loop, on-disk formats, and manufactured-solution studies.

// Parameter checks use the negated form `!(x > 0.0)` on purpose: unlike
// `x <= 0.0`, it also sends NaN down the rejection path.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod brinkman;
pub mod chsolver;
pub mod config;
pub mod degiorgi;
pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod linsolve;
pub mod material;
pub mod mms;
pub mod sim;

pub use error::{ChbError, Result};
pub use grid::{Grid2D, ScalarField, StaggeredVectorField};
pub use material::{MaterialModel, Mobility, MobilityKind, Potential, PotentialKind};
