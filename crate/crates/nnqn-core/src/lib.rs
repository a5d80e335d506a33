//! Learned-singular-value quasi-Newton solvers for nonlinear inverse problems.
//!
//! The crate provides a 2D electrical impedance tomography forward model
//! (Complete Electrode Model on P1 triangles), TV / Laplacian priors,
//! randomized-field dataset generation, a self-contained MLP that predicts
//! Jacobian singular values from model outputs, and three reconstruction
//! drivers: perturbation Gauss-Newton, Broyden's secant update, and the
//! learned quasi-Newton method built on a fixed singular-vector anchor.

pub mod error;
pub mod fem;
pub mod mesh;
pub mod metrics;
pub mod mlp;
pub mod phantom;
pub mod priors;
pub mod sampler;
pub mod solvers;
pub mod sparse;
pub mod svd;

pub use error::{Error, Result};
