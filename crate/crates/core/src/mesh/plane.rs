//! Structured periodic mesh of the unit square.

use super::{MeshData, MeshKind};
use crate::error::{Error, Result};

/// Uniform n x n quadrilateral mesh of [0,1)^2 with doubly periodic
/// identification. n^2 vertices, n^2 cells, 2 n^2 edges; periodicity is by
/// index arithmetic, so opposite sides share vertices and edges.
pub fn periodic_unit_square(n: usize) -> Result<MeshData> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "periodic plane resolution must be at least 2, got {n}"
        )));
    }
    let nu = n as u32;
    let vid = |i: u32, j: u32| -> u32 { (j % nu) * nu + (i % nu) };
    // Horizontal edges (toward +x) come first, then vertical (toward +y),
    // both indexed like the vertex they start from.
    let eh = |i: u32, j: u32| -> u32 { (j % nu) * nu + (i % nu) };
    let ev = |i: u32, j: u32| -> u32 { nu * nu + (j % nu) * nu + (i % nu) };

    let mut cell_vertices = Vec::with_capacity(4 * n * n);
    let mut cell_edges = Vec::with_capacity(4 * n * n);
    for j in 0..nu {
        for i in 0..nu {
            cell_vertices.extend_from_slice(&[
                vid(i, j),
                vid(i + 1, j),
                vid(i + 1, j + 1),
                vid(i, j + 1),
            ]);
            cell_edges.extend_from_slice(&[eh(i, j), ev(i + 1, j), eh(i, j + 1), ev(i, j)]);
        }
    }

    let mut coords = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            coords.push(i as f64 / n as f64);
            coords.push(j as f64 / n as f64);
        }
    }

    Ok(MeshData {
        kind: MeshKind::PeriodicPlane,
        coord_degree: 1,
        radius: 1.0,
        n_vertices: n * n,
        n_edges: 2 * n * n,
        n_cells: n * n,
        cell_vertices,
        cell_edges,
        coords,
        plane_n: n,
    })
}

/// Minimum-image wrap of a displacement on the unit torus, in (-0.5, 0.5].
#[inline]
pub fn wrap_half(d: f64) -> f64 {
    d - (d - 0.5).ceil()
}
