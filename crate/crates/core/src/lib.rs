//! Generation of r-adapted meshes by optimal transport.
//!
//! The library equidistributes a prescribed monitor function over the doubly
//! periodic unit square or the sphere by solving a Monge-Ampere-type equation
//! with a mixed finite-element discretization: a scalar potential and an
//! auxiliary Hessian tensor, both in degree-2 continuous spaces. Two
//! nonlinear drivers are provided (a parabolic relaxation iteration and a
//! preconditioned quasi-Newton method) together with mesh-quality
//! diagnostics and an exact reference map for axisymmetric sphere problems.

pub mod error;
pub mod fem;
pub mod la;
pub mod mesh;
pub mod monitor;
pub mod oracle;
pub mod solve;
pub mod sparse;

pub use error::{Error, Result};
