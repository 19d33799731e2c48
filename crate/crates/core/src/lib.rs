//! Shared whole-body control for two floating-base agents lifting a rigid payload.
//!
//! The crate is organized bottom-up:
//!
//! - [`spatial`]: rotations, poses, 6D motion/wrench transforms and inertias.
//! - [`model`]: floating-base kinematic trees, Jacobians, mass matrix, bias
//!   forces and centroidal momentum.
//! - [`coupled`]: the composite agents + payload system, its constraint matrix,
//!   grasp matrix and squeeze space.
//! - [`control`]: momentum and payload tasks, the affine torque map `τ(f)`,
//!   contact inequalities and the force-ergonomics QP.
//! - [`ergonomics`]: static force ergonomics, posture optimization and
//!   minimum-jerk references.
//! - [`sim`]: a fixed-step constrained simulator and scenario runner.
//! - [`files`], [`summary`], [`cli`]: file formats, summary statistics and the
//!   command-line front end.

pub mod cli;
pub mod control;
pub mod coupled;
pub mod ergonomics;
pub mod error;
pub mod files;
pub mod model;
pub mod qp;
pub mod reference;
pub mod sim;
pub mod spatial;
pub mod summary;

#[cfg(test)]
mod testing;

pub use error::Error;
