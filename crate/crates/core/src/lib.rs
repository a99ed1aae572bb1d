//! Deterministic discontinuous Galerkin solver for the dimensionless
//! Boltzmann–Poisson system of electron transport in silicon.
//!
//! The electron distribution is carried in energy–angle coordinates
//! `(w, mu[, phi])` as `Phi = s(w) f`, discretized with piecewise-linear
//! DG elements on nonuniform tensor grids. Optical-phonon scattering enters
//! as an integral-difference operator with energy shifts of `gamma`, and the
//! electrostatic potential is obtained from a local DG (LDG) Poisson solver.
//!
//! Module map:
//! - [`constants`]: dimensionless parameters and unit conversions
//! - [`mesh`]: axes, phase-space grids and the preset meshes
//! - [`basis`]: the piecewise-linear field representation and checkpoints
//! - [`quadtables`]: singularity-free energy integrals
//! - [`collision`], [`transport`]: the two halves of the kinetic right-hand side
//! - [`poisson`]: 1D and 2D LDG Poisson solvers
//! - [`device`]: doping, initial data, boundary ghosts, presets
//! - [`moments`]: density, momentum, velocity, energy
//! - [`stepper`]: the coupled time advance
//! - [`io`]: run configuration, CSV output, command-line plumbing

// `!(x > 0.0)` is the NaN-rejecting guard used throughout; index loops
// mirror the cell-index formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod basis;
pub mod collision;
pub mod constants;
pub mod device;
pub mod error;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod moments;
pub mod poisson;
pub mod quadrature;
pub mod quadtables;
pub mod stepper;
pub mod transport;

pub use error::{Error, Result};
