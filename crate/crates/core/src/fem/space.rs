//! Continuous nodal function spaces over a mesh, with scalar, vector, or
//! tensor value shape. Scalar dofs are numbered vertices first, then one dof
//! per edge, then one per cell (degree-2 quads), matching the mesh node
//! numbering. Vector/tensor coefficient vectors are stored in component
//! blocks: component c occupies `[c * n_scalar, (c+1) * n_scalar)`, with
//! tensor components in row-major order.

use super::element::ElementKind;
use crate::error::{Error, Result};
use crate::mesh::{node_count_for_degree, wrap_half, CellShape, MeshData, MeshKind};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValueShape {
    Scalar,
    /// d ambient components.
    Vector(usize),
    /// d x d ambient components, row-major.
    Tensor(usize),
}

impl ValueShape {
    #[inline]
    pub fn components(self) -> usize {
        match self {
            ValueShape::Scalar => 1,
            ValueShape::Vector(d) => d,
            ValueShape::Tensor(d) => d * d,
        }
    }
}

#[derive(Debug)]
pub struct FunctionSpace {
    pub mesh: Arc<MeshData>,
    pub element: ElementKind,
    pub shape: ValueShape,
    /// Scalar dofs (per component).
    pub n_scalar: usize,
    dof_map: Vec<u32>,
}

impl FunctionSpace {
    pub fn new(mesh: Arc<MeshData>, degree: usize, shape: ValueShape) -> Result<Arc<FunctionSpace>> {
        if degree != 1 && degree != 2 {
            return Err(Error::InvalidParameter(format!(
                "function space degree must be 1 or 2, got {degree}"
            )));
        }
        let element = ElementKind::for_shape(mesh.shape(), degree);
        let n_scalar = node_count_for_degree(&mesh, degree);
        let nb = element.n_basis();
        let nv = mesh.shape().vertices();
        let mut dof_map = Vec::with_capacity(nb * mesh.n_cells);
        for c in 0..mesh.n_cells {
            dof_map.extend_from_slice(&mesh.cell_vertices[c * nv..(c + 1) * nv]);
            if degree == 2 {
                for &e in &mesh.cell_edges[c * nv..(c + 1) * nv] {
                    dof_map.push(mesh.n_vertices as u32 + e);
                }
                if mesh.shape() == CellShape::Quad {
                    dof_map.push((mesh.n_vertices + mesh.n_edges + c) as u32);
                }
            }
        }
        Ok(Arc::new(FunctionSpace {
            mesh,
            element,
            shape,
            n_scalar,
            dof_map,
        }))
    }

    #[inline]
    pub fn cell_dofs(&self, cell: usize) -> &[u32] {
        let nb = self.element.n_basis();
        &self.dof_map[cell * nb..(cell + 1) * nb]
    }

    #[inline]
    pub fn components(&self) -> usize {
        self.shape.components()
    }

    #[inline]
    pub fn n_dofs(&self) -> usize {
        self.n_scalar * self.components()
    }

    /// Physical positions of the scalar dofs on the computational mesh.
    /// Degree-2 edge and cell nodes that the mesh itself does not carry are
    /// synthesized as midpoints (minimum-image on the periodic plane, chords
    /// on degree-1 sphere meshes).
    pub fn node_positions(&self) -> Vec<[f64; 3]> {
        let mesh = &self.mesh;
        let dim = mesh.dim();
        let mut out = vec![[0.0; 3]; self.n_scalar];
        if self.element.degree() <= mesh.coord_degree {
            for (n, slot) in out.iter_mut().enumerate() {
                *slot = mesh.node_coord(n);
            }
            return out;
        }
        for v in 0..mesh.n_vertices {
            out[v] = mesh.node_coord(v);
        }
        let nv = mesh.shape().vertices();
        let locals = mesh.shape().local_edges();
        for c in 0..mesh.n_cells {
            let vs = &mesh.cell_vertices[c * nv..(c + 1) * nv];
            let a0 = mesh.node_coord(vs[0] as usize);
            let mut center = [0.0f64; 3];
            for (le, pair) in locals.iter().enumerate() {
                let pa = unwrap_to(mesh, mesh.node_coord(vs[pair[0]] as usize), a0);
                let pb = unwrap_to(mesh, mesh.node_coord(vs[pair[1]] as usize), a0);
                let e = mesh.cell_edges[c * nv + le] as usize;
                let mut mid = [0.0; 3];
                for d in 0..dim {
                    mid[d] = 0.5 * (pa[d] + pb[d]);
                }
                out[mesh.n_vertices + e] = wrap_point(mesh, mid);
            }
            if mesh.shape() == CellShape::Quad {
                for vi in vs {
                    let p = unwrap_to(mesh, mesh.node_coord(*vi as usize), a0);
                    for d in 0..dim {
                        center[d] += 0.25 * p[d];
                    }
                }
                out[mesh.n_vertices + mesh.n_edges + c] = wrap_point(mesh, center);
            }
        }
        out
    }
}

#[inline]
fn unwrap_to(mesh: &MeshData, mut p: [f64; 3], anchor: [f64; 3]) -> [f64; 3] {
    if mesh.kind == MeshKind::PeriodicPlane {
        for d in 0..2 {
            p[d] = anchor[d] + wrap_half(p[d] - anchor[d]);
        }
    }
    p
}

#[inline]
fn wrap_point(mesh: &MeshData, mut p: [f64; 3]) -> [f64; 3] {
    if mesh.kind == MeshKind::PeriodicPlane {
        for d in 0..2 {
            p[d] -= p[d].floor();
        }
    }
    p
}

/// Coefficient vector over a [`FunctionSpace`].
#[derive(Debug, Clone)]
pub struct Field {
    pub space: Arc<FunctionSpace>,
    pub data: Vec<f64>,
}

impl Field {
    pub fn zeros(space: Arc<FunctionSpace>) -> Field {
        let n = space.n_dofs();
        Field {
            space,
            data: vec![0.0; n],
        }
    }

    pub fn from_data(space: Arc<FunctionSpace>, data: Vec<f64>) -> Result<Field> {
        if data.len() != space.n_dofs() {
            return Err(Error::ShapeMismatch {
                expected: space.n_dofs(),
                got: data.len(),
                context: "field data",
            });
        }
        Ok(Field { space, data })
    }

    #[inline]
    pub fn comp(&self, c: usize) -> &[f64] {
        let n = self.space.n_scalar;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn comp_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.space.n_scalar;
        &mut self.data[c * n..(c + 1) * n]
    }
}
