//! Computational meshes: the doubly periodic unit square, the equiangular
//! cubed sphere, and icosahedral sphere triangulations.
//!
//! A mesh stores vertex connectivity, an explicit edge numbering (needed for
//! degree-2 nodal spaces), and a flat coordinate array. Nodes are numbered
//! vertices first, then one node per edge, then (for quadrilaterals) one node
//! per cell; degree-1 meshes only use the vertex block. Periodicity on the
//! plane is structural: cells reference wrapped vertex indices and geometry
//! is unwrapped per cell, so there are no ghost entities.

mod plane;
mod sphere;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshKind {
    PeriodicPlane,
    CubedSphere,
    Icosahedral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellShape {
    Quad,
    Triangle,
}

impl CellShape {
    #[inline]
    pub fn vertices(self) -> usize {
        match self {
            CellShape::Quad => 4,
            CellShape::Triangle => 3,
        }
    }

    /// Local edges as vertex index pairs, in the order used for mid-edge nodes.
    #[inline]
    pub fn local_edges(self) -> &'static [[usize; 2]] {
        match self {
            CellShape::Quad => &[[0, 1], [1, 2], [2, 3], [3, 0]],
            CellShape::Triangle => &[[0, 1], [1, 2], [2, 0]],
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeshData {
    pub kind: MeshKind,
    /// Degree of the coordinate field: 1 (vertices only) or 2 (plus edge and,
    /// on quads, cell-center nodes).
    pub coord_degree: usize,
    /// Sphere radius; 1.0 and unused for plane meshes.
    pub radius: f64,
    pub n_vertices: usize,
    pub n_edges: usize,
    pub n_cells: usize,
    /// Cell -> vertex indices, counterclockwise, stride `shape().vertices()`.
    pub cell_vertices: Vec<u32>,
    /// Cell -> edge indices in local edge order, same stride.
    pub cell_edges: Vec<u32>,
    /// Node coordinates, node-major with `dim()` components each.
    pub coords: Vec<f64>,
    /// Structured resolution for the periodic plane (cells per axis); 0 otherwise.
    pub plane_n: usize,
}

impl MeshData {
    #[inline]
    pub fn shape(&self) -> CellShape {
        match self.kind {
            MeshKind::Icosahedral => CellShape::Triangle,
            _ => CellShape::Quad,
        }
    }

    /// Ambient coordinate dimension: 2 on the plane, 3 on the sphere.
    #[inline]
    pub fn dim(&self) -> usize {
        match self.kind {
            MeshKind::PeriodicPlane => 2,
            _ => 3,
        }
    }

    #[inline]
    pub fn is_sphere(&self) -> bool {
        self.kind != MeshKind::PeriodicPlane
    }

    /// Number of coordinate nodes for the mesh's own degree.
    pub fn node_count(&self) -> usize {
        node_count_for_degree(self, self.coord_degree)
    }

    /// Nodes of `cell` in local order: vertices, mid-edge nodes, then the
    /// cell-center node for degree-2 quads.
    pub fn cell_nodes(&self, cell: usize, out: &mut Vec<u32>) {
        out.clear();
        let nv = self.shape().vertices();
        out.extend_from_slice(&self.cell_vertices[cell * nv..(cell + 1) * nv]);
        if self.coord_degree == 2 {
            for &e in &self.cell_edges[cell * nv..(cell + 1) * nv] {
                out.push(self.n_vertices as u32 + e);
            }
            if self.shape() == CellShape::Quad {
                out.push((self.n_vertices + self.n_edges + cell) as u32);
            }
        }
    }

    #[inline]
    pub fn node_coord(&self, node: usize) -> [f64; 3] {
        let d = self.dim();
        let mut x = [0.0; 3];
        x[..d].copy_from_slice(&self.coords[node * d..node * d + d]);
        x
    }

    /// Same topology with replacement coordinates (e.g. a physical mesh).
    pub fn copy_with_coords(&self, coords: Vec<f64>) -> Result<MeshData> {
        let expected = self.node_count() * self.dim();
        if coords.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: coords.len(),
                context: "copy_with_coords",
            });
        }
        let mut out = self.clone();
        out.coords = coords;
        Ok(out)
    }
}

pub(crate) fn node_count_for_degree(mesh: &MeshData, degree: usize) -> usize {
    match degree {
        1 => mesh.n_vertices,
        2 => {
            mesh.n_vertices
                + mesh.n_edges
                + if mesh.shape() == CellShape::Quad {
                    mesh.n_cells
                } else {
                    0
                }
        }
        _ => unreachable!("unsupported degree"),
    }
}

pub use plane::{periodic_unit_square, wrap_half};
pub use sphere::{cubed_sphere, icosahedral_sphere};

/// Builds the edge numbering from vertex pairs. Valid whenever no two
/// distinct geometric edges share both endpoints (true for the sphere
/// meshes; the periodic plane builds its edges structurally instead).
pub(crate) fn edges_from_pairs(
    shape: CellShape,
    cell_vertices: &[u32],
) -> (usize, Vec<u32>) {
    use std::collections::HashMap;
    let nv = shape.vertices();
    let locals = shape.local_edges();
    let n_cells = cell_vertices.len() / nv;
    let mut map: HashMap<(u32, u32), u32> = HashMap::new();
    let mut cell_edges = Vec::with_capacity(cell_vertices.len());
    for c in 0..n_cells {
        let vs = &cell_vertices[c * nv..(c + 1) * nv];
        for le in locals {
            let (a, b) = (vs[le[0]], vs[le[1]]);
            let key = (a.min(b), a.max(b));
            let next = map.len() as u32;
            let id = *map.entry(key).or_insert(next);
            cell_edges.push(id);
        }
    }
    (map.len(), cell_edges)
}
