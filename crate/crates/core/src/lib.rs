//! Numerical laboratory for refuge-controlled prey / predator / vector-borne
//! epidemic dynamics on a one-dimensional field `[-L, L]`.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] holds parameters, the grid, fields and the refuge map.
//! * [`discretize`] provides the Neumann finite-difference operators and the
//!   tridiagonal elliptic solver.
//! * [`dynamics`] integrates the full, reduced and homogenized systems.
//! * [`spectral`] computes principal eigenpairs and empirical decay rates.
//! * [`harvest`] evaluates the harvest, its linearization and closed forms.
//! * [`optimize`] runs projected ascent on the linearized harvest.
//! * [`rearrange`] implements discrete Schwarz rearrangements.
//! * [`homogenize`] builds high-frequency refuges and their limits.
//! * [`verify`] bundles the property checks used by the `verify` command.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod discretize;
pub mod dynamics;
pub mod error;
pub mod harvest;
pub mod homogenize;
pub mod model;
pub mod optimize;
pub mod par;
pub mod rearrange;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
pub use model::{derive_coeffs, integrate, mean, Field, Grid, ModelParams, Refuge, SpatialCoeffs};
