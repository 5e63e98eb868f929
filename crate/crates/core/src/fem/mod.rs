//! Mixed finite-element infrastructure: reference elements, quadrature,
//! nodal function spaces, per-cell geometry, and global assembly.

mod assemble;
mod element;
mod geometry;
mod quadrature;
mod space;

pub use assemble::{
    assemble_gradient_moment, assemble_mass, assemble_stiffness, assemble_suite, integrate,
    lumped_mass, mesh_measure, mixed_pattern, riesz_preconditioner, scalar_pattern, OperatorSuite,
};
pub use element::ElementKind;
pub use geometry::{CellGeometry, ElementTab, GeometryMode};
pub use quadrature::QuadratureRule;
pub use space::{Field, FunctionSpace, ValueShape};
