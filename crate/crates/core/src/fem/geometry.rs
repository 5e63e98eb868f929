//! Per-cell geometry of the coordinate map at quadrature points.
//!
//! The plane is handled with 2x2 Jacobians and minimum-image unwrapping of
//! cells that cross the periodic seam. Sphere cells carry a 3x2 Jacobian;
//! gradients are pushed forward through the first fundamental form, which
//! makes them tangential automatically. Determinants are signed in both
//! settings (on the sphere, relative to the outward radial direction), so
//! inverted cells are detectable.

use super::element::ElementKind;
use super::quadrature::QuadratureRule;
use crate::error::{Error, Result};
use crate::mesh::{wrap_half, MeshData, MeshKind};

/// Basis values and reference gradients tabulated at quadrature points.
pub struct ElementTab {
    pub element: ElementKind,
    pub n_basis: usize,
    pub n_q: usize,
    /// `[q * n_basis + a]`
    pub values: Vec<f64>,
    /// `[q * n_basis + a]`
    pub grads: Vec<[f64; 2]>,
}

impl ElementTab {
    pub fn new(element: ElementKind, rule: &QuadratureRule) -> ElementTab {
        let nb = element.n_basis();
        let nq = rule.len();
        let mut values = vec![0.0; nq * nb];
        let mut grads = vec![[0.0; 2]; nq * nb];
        for (q, &p) in rule.points.iter().enumerate() {
            element.eval(p, &mut values[q * nb..(q + 1) * nb]);
            element.eval_grad(p, &mut grads[q * nb..(q + 1) * nb]);
        }
        ElementTab {
            element,
            n_basis: nb,
            n_q: nq,
            values,
            grads,
        }
    }

    /// Tab for the mesh's own coordinate element.
    pub fn for_coordinates(mesh: &MeshData, rule: &QuadratureRule) -> ElementTab {
        ElementTab::new(
            ElementKind::for_shape(mesh.shape(), mesh.coord_degree),
            rule,
        )
    }

    #[inline]
    pub fn value(&self, q: usize, a: usize) -> f64 {
        self.values[q * self.n_basis + a]
    }

    #[inline]
    pub fn grad(&self, q: usize, a: usize) -> [f64; 2] {
        self.grads[q * self.n_basis + a]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryMode {
    /// Inverted or degenerate cells are errors.
    Strict,
    /// Signed determinants pass through; used by diagnostics on candidate
    /// physical meshes that may be tangled.
    Permissive,
}

/// Geometry of one cell at the quadrature points, reused across cells to
/// avoid reallocation.
pub struct CellGeometry {
    pub dim: usize,
    pub n_q: usize,
    /// Quadrature weight times the (signed) metric scale.
    pub weights: Vec<f64>,
    /// Signed Jacobian determinant (plane) or signed area scale relative to
    /// the outward radial direction (sphere).
    pub dets: Vec<f64>,
    /// Physical quadrature positions.
    pub points: Vec<[f64; 3]>,
    /// Pushforward of reference gradients: row d of `push[q]` dotted with a
    /// reference gradient gives component d of the physical gradient.
    pub push: Vec<[[f64; 2]; 3]>,
    /// Outward unit normals; empty on the plane.
    pub normals: Vec<[f64; 3]>,
    node_ids: Vec<u32>,
    node_xyz: Vec<[f64; 3]>,
}

impl CellGeometry {
    pub fn new(mesh: &MeshData, rule: &QuadratureRule) -> CellGeometry {
        let nq = rule.len();
        CellGeometry {
            dim: mesh.dim(),
            n_q: nq,
            weights: vec![0.0; nq],
            dets: vec![0.0; nq],
            points: vec![[0.0; 3]; nq],
            push: vec![[[0.0; 2]; 3]; nq],
            normals: if mesh.is_sphere() {
                vec![[0.0; 3]; nq]
            } else {
                Vec::new()
            },
            node_ids: Vec::new(),
            node_xyz: Vec::new(),
        }
    }

    /// The coordinates of the cell's nodes after seam unwrapping, in the
    /// order of `coord_tab`'s basis.
    pub fn cell_nodes(&self) -> &[[f64; 3]] {
        &self.node_xyz
    }

    pub fn fill(
        &mut self,
        mesh: &MeshData,
        cell: usize,
        coord_tab: &ElementTab,
        rule: &QuadratureRule,
        mode: GeometryMode,
    ) -> Result<()> {
        mesh.cell_nodes(cell, &mut self.node_ids);
        debug_assert_eq!(self.node_ids.len(), coord_tab.n_basis);
        self.node_xyz.clear();
        let periodic = mesh.kind == MeshKind::PeriodicPlane;
        let anchor = mesh.node_coord(self.node_ids[0] as usize);
        for &nid in &self.node_ids {
            let mut p = mesh.node_coord(nid as usize);
            if periodic {
                for d in 0..2 {
                    p[d] = anchor[d] + wrap_half(p[d] - anchor[d]);
                }
            }
            self.node_xyz.push(p);
        }

        for q in 0..self.n_q {
            let mut x = [0.0f64; 3];
            let mut j = [[0.0f64; 2]; 3]; // j[d][k] = dx_d / dref_k
            for (a, p) in self.node_xyz.iter().enumerate() {
                let v = coord_tab.value(q, a);
                let g = coord_tab.grad(q, a);
                for d in 0..self.dim {
                    x[d] += v * p[d];
                    j[d][0] += g[0] * p[d];
                    j[d][1] += g[1] * p[d];
                }
            }
            self.points[q] = x;

            if self.dim == 2 {
                let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
                if mode == GeometryMode::Strict && !(det > 0.0) {
                    return Err(Error::DegenerateCell {
                        cell,
                        detail: format!("jacobian determinant {det:e} at quadrature point {q}"),
                    });
                }
                self.dets[q] = det;
                self.weights[q] = rule.weights[q] * det;
                if det != 0.0 {
                    self.push[q] = [
                        [j[1][1] / det, -j[1][0] / det],
                        [-j[0][1] / det, j[0][0] / det],
                        [0.0, 0.0],
                    ];
                } else {
                    self.push[q] = [[0.0; 2]; 3];
                }
            } else {
                let nrm = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                if !(nrm > 0.0) {
                    return Err(Error::DegenerateCell {
                        cell,
                        detail: "cell passes through the origin".into(),
                    });
                }
                let n_hat = [x[0] / nrm, x[1] / nrm, x[2] / nrm];
                // Area scale |j0 x j1| = sqrt(det G); the sign comes from the
                // outward-radial side test so inverted cells are detectable.
                // The magnitude is kept even for cells tilted against the
                // radial direction (flat faceted geometry), where projecting
                // onto n_hat would shrink the area element.
                let cx = j[1][0] * j[2][1] - j[2][0] * j[1][1];
                let cy = j[2][0] * j[0][1] - j[0][0] * j[2][1];
                let cz = j[0][0] * j[1][1] - j[1][0] * j[0][1];
                let cross_nrm = (cx * cx + cy * cy + cz * cz).sqrt();
                let outward = cx * n_hat[0] + cy * n_hat[1] + cz * n_hat[2];
                let signed = if outward >= 0.0 { cross_nrm } else { -cross_nrm };
                if mode == GeometryMode::Strict && !(signed > 0.0) {
                    return Err(Error::DegenerateCell {
                        cell,
                        detail: format!("signed area scale {signed:e} at quadrature point {q}"),
                    });
                }
                let g00 = j[0][0] * j[0][0] + j[1][0] * j[1][0] + j[2][0] * j[2][0];
                let g01 = j[0][0] * j[0][1] + j[1][0] * j[1][1] + j[2][0] * j[2][1];
                let g11 = j[0][1] * j[0][1] + j[1][1] * j[1][1] + j[2][1] * j[2][1];
                let det_g = g00 * g11 - g01 * g01;
                self.dets[q] = signed;
                self.weights[q] = rule.weights[q] * signed;
                self.normals[q] = n_hat;
                if det_g > 0.0 {
                    let inv = [
                        [g11 / det_g, -g01 / det_g],
                        [-g01 / det_g, g00 / det_g],
                    ];
                    for d in 0..3 {
                        self.push[q][d] = [
                            j[d][0] * inv[0][0] + j[d][1] * inv[1][0],
                            j[d][0] * inv[0][1] + j[d][1] * inv[1][1],
                        ];
                    }
                } else {
                    if mode == GeometryMode::Strict {
                        return Err(Error::DegenerateCell {
                            cell,
                            detail: format!("singular metric (det {det_g:e})"),
                        });
                    }
                    for d in 0..3 {
                        self.push[q][d] = [0.0, 0.0];
                    }
                }
            }
        }
        Ok(())
    }

    /// Physical gradient of basis function `a` of `tab` at point `q`.
    #[inline]
    pub fn phys_grad(&self, tab: &ElementTab, q: usize, a: usize) -> [f64; 3] {
        let g = tab.grad(q, a);
        let p = &self.push[q];
        [
            p[0][0] * g[0] + p[0][1] * g[1],
            p[1][0] * g[0] + p[1][1] * g[1],
            p[2][0] * g[0] + p[2][1] * g[1],
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{cubed_sphere, periodic_unit_square, CellShape};

    #[test]
    fn uniform_plane_cells_have_constant_jacobian() {
        let mesh = periodic_unit_square(4).unwrap();
        let rule = QuadratureRule::for_shape(CellShape::Quad);
        let tab = ElementTab::for_coordinates(&mesh, &rule);
        let mut geo = CellGeometry::new(&mesh, &rule);
        for cell in 0..mesh.n_cells {
            geo.fill(&mesh, cell, &tab, &rule, GeometryMode::Strict).unwrap();
            for q in 0..geo.n_q {
                assert!((geo.dets[q] - 1.0 / 16.0).abs() <= 1e-14, "cell {cell}");
                // Physical gradient of the reference coordinate is 4 e_k.
                let p = geo.push[q];
                assert!((p[0][0] - 4.0).abs() <= 1e-12);
                assert!((p[1][1] - 4.0).abs() <= 1e-12);
                assert!(p[0][1].abs() <= 1e-12);
                assert!(p[1][0].abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn seam_cells_unwrap_to_positive_determinants() {
        let mesh = periodic_unit_square(3).unwrap();
        let rule = QuadratureRule::for_shape(CellShape::Quad);
        let tab = ElementTab::for_coordinates(&mesh, &rule);
        let mut geo = CellGeometry::new(&mesh, &rule);
        // Every cell, including the ones whose vertices wrap, has det 1/9.
        let mut total = 0.0;
        for cell in 0..mesh.n_cells {
            geo.fill(&mesh, cell, &tab, &rule, GeometryMode::Strict).unwrap();
            total += geo.weights.iter().sum::<f64>();
        }
        assert!((total - 1.0).abs() <= 1e-13);
    }

    #[test]
    fn flipped_cell_rejected_in_strict_mode_only() {
        let mesh = periodic_unit_square(2).unwrap();
        let mut coords = mesh.coords.clone();
        // Swap two adjacent vertices to invert the incident cells.
        coords.swap(0, 2);
        coords.swap(1, 3);
        let bad = mesh.copy_with_coords(coords).unwrap();
        let rule = QuadratureRule::for_shape(CellShape::Quad);
        let tab = ElementTab::for_coordinates(&bad, &rule);
        let mut geo = CellGeometry::new(&bad, &rule);
        let mut strict_failed = false;
        let mut saw_negative = false;
        for cell in 0..bad.n_cells {
            if geo.fill(&bad, cell, &tab, &rule, GeometryMode::Strict).is_err() {
                strict_failed = true;
            }
            geo.fill(&bad, cell, &tab, &rule, GeometryMode::Permissive)
                .unwrap();
            if geo.dets.iter().any(|&d| d < 0.0) {
                saw_negative = true;
            }
        }
        assert!(strict_failed);
        assert!(saw_negative);
    }

    #[test]
    fn sphere_normals_are_radial_and_scales_positive() {
        let mesh = cubed_sphere(4, 2, 1.0).unwrap();
        let rule = QuadratureRule::for_shape(CellShape::Quad);
        let tab = ElementTab::for_coordinates(&mesh, &rule);
        let mut geo = CellGeometry::new(&mesh, &rule);
        for cell in 0..mesh.n_cells {
            geo.fill(&mesh, cell, &tab, &rule, GeometryMode::Strict).unwrap();
            for q in 0..geo.n_q {
                assert!(geo.dets[q] > 0.0);
                let x = geo.points[q];
                let n = geo.normals[q];
                let nn = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                assert!((nn - 1.0).abs() <= 1e-14);
                let xdotn = x[0] * n[0] + x[1] * n[1] + x[2] * n[2];
                let xn = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                assert!((xdotn - xn).abs() <= 1e-12);
                // Tangential pushforward: physical gradients lie in the
                // tangent plane of the quadratic chart, not exactly radial-
                // orthogonal, but must be finite and nonzero.
                let g = geo.phys_grad(&tab, q, 0);
                assert!(g.iter().all(|v| v.is_finite()));
            }
        }
    }
}
