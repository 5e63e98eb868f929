//! Sphere meshes: the equiangular cubed sphere and subdivided icosahedra.

use super::{edges_from_pairs, CellShape, MeshData, MeshKind};
use crate::error::{Error, Result};
use crate::la::{add3, normalize3, scale3, sub3};
use std::collections::HashMap;

/// Equiangular tangent table: `tan(pi/2 * (k/m - 1/2))` for k = 0..=m, with
/// the endpoints set to exactly +-1 and odd symmetry enforced bitwise. All
/// six panels draw from this one table, so points on shared panel edges come
/// out bit-identical and can be deduplicated exactly.
fn equiangular_table(m: usize) -> Vec<f64> {
    let mut t = vec![0.0; m + 1];
    for k in 0..=m / 2 {
        let v = if k == 0 {
            -1.0
        } else {
            (std::f64::consts::FRAC_PI_2 * (k as f64 / m as f64 - 0.5)).tan()
        };
        t[k] = v;
        t[m - k] = -v;
    }
    for v in t.iter_mut() {
        if *v == 0.0 {
            *v = 0.0;
        }
    }
    t
}

/// Cube-surface point of panel `p` at tangent parameters (a, b). The six
/// parametrizations are arranged so the in-panel axes (d/da, d/db) and the
/// outward normal always form a right-handed frame.
#[inline]
fn panel_point(p: usize, a: f64, b: f64) -> [f64; 3] {
    match p {
        0 => [1.0, a, b],
        1 => [-1.0, b, a],
        2 => [b, 1.0, a],
        3 => [a, -1.0, b],
        4 => [a, b, 1.0],
        _ => [b, a, -1.0],
    }
}

#[inline]
fn project(p: [f64; 3], radius: f64) -> [f64; 3] {
    scale3(normalize3(p), radius)
}

/// Cubed-sphere mesh with n x n quadrilaterals per panel (6 n^2 cells,
/// 6 n^2 + 2 vertices), radially projected to radius `radius`. For
/// `degree == 2` mid-edge and cell-center nodes are taken at half-steps of
/// the equiangular parametrization and sphere-projected, so the vertex set
/// is identical to the degree-1 mesh.
pub fn cubed_sphere(n: usize, degree: usize, radius: f64) -> Result<MeshData> {
    if n < 1 {
        return Err(Error::InvalidParameter(
            "cubed sphere needs at least 1 cell per panel edge".into(),
        ));
    }
    check_degree_radius(degree, radius)?;

    let table = equiangular_table(2 * n);
    let hw = 2 * n + 1; // half-step grid width per panel
    let mut vertex_ids: HashMap<[u64; 3], u32> = HashMap::new();
    let mut vertex_coords: Vec<f64> = Vec::new();
    // Panel-local grids of global vertex ids at the even-even points.
    let mut grids: Vec<Vec<u32>> = Vec::with_capacity(6);

    for p in 0..6 {
        let mut grid = vec![u32::MAX; (n + 1) * (n + 1)];
        for j in 0..=n {
            for i in 0..=n {
                let x = project(panel_point(p, table[2 * i], table[2 * j]), radius);
                let key = [x[0].to_bits(), x[1].to_bits(), x[2].to_bits()];
                let next = vertex_ids.len() as u32;
                let id = *vertex_ids.entry(key).or_insert_with(|| {
                    vertex_coords.extend_from_slice(&x);
                    next
                });
                grid[j * (n + 1) + i] = id;
            }
        }
        grids.push(grid);
    }
    let n_vertices = vertex_ids.len();
    assert_eq!(n_vertices, 6 * n * n + 2, "cubed-sphere vertex dedup failed");

    let mut cell_vertices = Vec::with_capacity(4 * 6 * n * n);
    for grid in &grids {
        for j in 0..n {
            for i in 0..n {
                let at = |ii: usize, jj: usize| grid[jj * (n + 1) + ii];
                cell_vertices.extend_from_slice(&[
                    at(i, j),
                    at(i + 1, j),
                    at(i + 1, j + 1),
                    at(i, j + 1),
                ]);
            }
        }
    }
    let (n_edges, cell_edges) = edges_from_pairs(CellShape::Quad, &cell_vertices);
    let n_cells = 6 * n * n;

    let mut coords = vertex_coords;
    if degree == 2 {
        coords.resize(3 * (n_vertices + n_edges + n_cells), 0.0);
        // Follow each cell's half-step points; shared edges get written more
        // than once with identical bits.
        for (p, grid) in grids.iter().enumerate() {
            let _ = grid;
            for j in 0..n {
                for i in 0..n {
                    let cell = p * n * n + j * n + i;
                    let half = |ii: usize, jj: usize| -> [f64; 3] {
                        debug_assert!(ii < hw && jj < hw);
                        project(panel_point(p, table[ii], table[jj]), radius)
                    };
                    let mids = [
                        half(2 * i + 1, 2 * j),
                        half(2 * i + 2, 2 * j + 1),
                        half(2 * i + 1, 2 * j + 2),
                        half(2 * i, 2 * j + 1),
                    ];
                    for (le, m) in mids.iter().enumerate() {
                        let e = cell_edges[4 * cell + le] as usize;
                        coords[3 * (n_vertices + e)..3 * (n_vertices + e) + 3]
                            .copy_from_slice(m);
                    }
                    let c = half(2 * i + 1, 2 * j + 1);
                    let base = 3 * (n_vertices + n_edges + cell);
                    coords[base..base + 3].copy_from_slice(&c);
                }
            }
        }
    }

    Ok(MeshData {
        kind: MeshKind::CubedSphere,
        coord_degree: degree,
        radius,
        n_vertices,
        n_edges,
        n_cells,
        cell_vertices,
        cell_edges,
        coords,
        plane_n: 0,
    })
}

/// Icosahedral sphere triangulation: `refinements` rounds of 4-way edge-
/// midpoint subdivision of the regular icosahedron, vertices projected to
/// radius `radius`. 20 * 4^r cells. Degree 2 adds sphere-projected edge
/// midpoint nodes.
pub fn icosahedral_sphere(refinements: usize, degree: usize, radius: f64) -> Result<MeshData> {
    if refinements > 9 {
        return Err(Error::InvalidParameter(format!(
            "icosahedral refinement level {refinements} is unreasonably large"
        )));
    }
    check_degree_radius(degree, radius)?;

    let (mut verts, mut faces) = icosahedron_base();
    for _ in 0..refinements {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, verts: &mut Vec<[f64; 3]>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let m = normalize3(add3(verts[a as usize], verts[b as usize]));
                verts.push(m);
                (verts.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(4 * faces.len());
        for f in &faces {
            let [v0, v1, v2] = *f;
            let m01 = mid(v0, v1, &mut verts);
            let m12 = mid(v1, v2, &mut verts);
            let m20 = mid(v2, v0, &mut verts);
            next.push([v0, m01, m20]);
            next.push([v1, m12, m01]);
            next.push([v2, m20, m12]);
            next.push([m01, m12, m20]);
        }
        faces = next;
    }

    let n_vertices = verts.len();
    let n_cells = faces.len();
    let mut cell_vertices = Vec::with_capacity(3 * n_cells);
    for f in &faces {
        cell_vertices.extend_from_slice(f);
    }
    let (n_edges, cell_edges) = edges_from_pairs(CellShape::Triangle, &cell_vertices);

    let mut coords = Vec::with_capacity(3 * n_vertices);
    for v in &verts {
        coords.extend_from_slice(&scale3(*v, radius));
    }
    if degree == 2 {
        coords.resize(3 * (n_vertices + n_edges), 0.0);
        for (c, f) in faces.iter().enumerate() {
            for (le, pair) in CellShape::Triangle.local_edges().iter().enumerate() {
                let e = cell_edges[3 * c + le] as usize;
                let a = verts[f[pair[0]] as usize];
                let b = verts[f[pair[1]] as usize];
                let m = scale3(normalize3(add3(a, b)), radius);
                coords[3 * (n_vertices + e)..3 * (n_vertices + e) + 3].copy_from_slice(&m);
            }
        }
    }

    Ok(MeshData {
        kind: MeshKind::Icosahedral,
        coord_degree: degree,
        radius,
        n_vertices,
        n_edges,
        n_cells,
        cell_vertices,
        cell_edges,
        coords,
        plane_n: 0,
    })
}

fn check_degree_radius(degree: usize, radius: f64) -> Result<()> {
    if degree != 1 && degree != 2 {
        return Err(Error::InvalidParameter(format!(
            "coordinate degree must be 1 or 2, got {degree}"
        )));
    }
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sphere radius must be positive, got {radius}"
        )));
    }
    Ok(())
}

/// Unit icosahedron: 12 vertices from the golden-rectangle construction,
/// faces recovered from the raw edge length (2) and oriented outward.
fn icosahedron_base() -> (Vec<[f64; 3]>, Vec<[u32; 3]>) {
    let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
    let mut raw: Vec<[f64; 3]> = Vec::with_capacity(12);
    for &s1 in &[1.0, -1.0] {
        for &s2 in &[1.0, -1.0] {
            raw.push([0.0, s1, s2 * phi]);
            raw.push([s1, s2 * phi, 0.0]);
            raw.push([s2 * phi, 0.0, s1]);
        }
    }
    let adj = |a: &[f64; 3], b: &[f64; 3]| -> bool {
        let d = sub3(*a, *b);
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < 5.0
    };
    let mut faces: Vec<[u32; 3]> = Vec::with_capacity(20);
    for i in 0..12usize {
        for j in i + 1..12 {
            if !adj(&raw[i], &raw[j]) {
                continue;
            }
            for k in j + 1..12 {
                if adj(&raw[i], &raw[k]) && adj(&raw[j], &raw[k]) {
                    let centroid = add3(add3(raw[i], raw[j]), raw[k]);
                    let nrm = crate::la::cross3(sub3(raw[j], raw[i]), sub3(raw[k], raw[i]));
                    if crate::la::dot3(nrm, centroid) > 0.0 {
                        faces.push([i as u32, j as u32, k as u32]);
                    } else {
                        faces.push([i as u32, k as u32, j as u32]);
                    }
                }
            }
        }
    }
    assert_eq!(faces.len(), 20, "icosahedron face recovery failed");
    let verts = raw.into_iter().map(normalize3).collect();
    (verts, faces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::la::norm3;

    #[test]
    fn cubed_sphere_counts() {
        let m = cubed_sphere(16, 2, 1.0).unwrap();
        assert_eq!(m.n_cells, 1536);
        assert_eq!(m.n_vertices, 6 * 256 + 2);
        // Euler characteristic of the sphere: V - E + F = 2.
        assert_eq!(m.n_vertices as i64 - m.n_edges as i64 + m.n_cells as i64, 2);
        assert_eq!(m.node_count(), m.n_vertices + m.n_edges + m.n_cells);
    }

    #[test]
    fn cubed_sphere_nodes_on_sphere() {
        for degree in [1, 2] {
            let m = cubed_sphere(4, degree, 1.0).unwrap();
            for node in 0..m.node_count() {
                let r = norm3(m.node_coord(node));
                assert!((r - 1.0).abs() < 1e-12, "node {node} at radius {r}");
            }
        }
    }

    #[test]
    fn cubed_sphere_vertices_identical_across_degrees() {
        let m1 = cubed_sphere(16, 1, 1.0).unwrap();
        let m2 = cubed_sphere(16, 2, 1.0).unwrap();
        assert_eq!(m1.n_vertices, m2.n_vertices);
        assert_eq!(m1.coords[..], m2.coords[..3 * m1.n_vertices]);
    }

    #[test]
    fn cubed_sphere_edge_sharing() {
        let m = cubed_sphere(3, 1, 2.5).unwrap();
        let mut seen = vec![0usize; m.n_edges];
        for &e in &m.cell_edges {
            seen[e as usize] += 1;
        }
        assert!(seen.iter().all(|&c| c == 2), "closed surface: every edge twice");
    }

    #[test]
    fn icosahedral_counts() {
        let m0 = icosahedral_sphere(0, 1, 1.0).unwrap();
        assert_eq!((m0.n_vertices, m0.n_edges, m0.n_cells), (12, 30, 20));
        let m4 = icosahedral_sphere(4, 1, 1.0).unwrap();
        assert_eq!(m4.n_cells, 5120);
        assert_eq!(m4.n_vertices as i64 - m4.n_edges as i64 + m4.n_cells as i64, 2);
        let m6 = icosahedral_sphere(6, 1, 1.0).unwrap();
        assert_eq!(m6.n_cells, 81920);
    }

    #[test]
    fn icosahedral_refinement_quadruples_cells() {
        let a = icosahedral_sphere(2, 1, 1.0).unwrap();
        let b = icosahedral_sphere(3, 1, 1.0).unwrap();
        assert_eq!(b.n_cells, 4 * a.n_cells);
    }

    #[test]
    fn icosahedral_nodes_on_sphere() {
        let m = icosahedral_sphere(2, 2, 3.0).unwrap();
        for node in 0..m.node_count() {
            let r = norm3(m.node_coord(node));
            assert!((r - 3.0).abs() < 1e-12 * 3.0);
        }
    }

    #[test]
    fn copy_with_coords_validates_length() {
        let m = cubed_sphere(2, 1, 1.0).unwrap();
        assert!(m.copy_with_coords(vec![0.0; 5]).is_err());
        let same = m.copy_with_coords(m.coords.clone()).unwrap();
        assert_eq!(same.coords, m.coords);
    }
}
