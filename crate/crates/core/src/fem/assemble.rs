//! Global assembly of the bilinear forms the solvers need: mass, stiffness,
//! and the mixed first-derivative matrices that tie the auxiliary Hessian to
//! the potential. Assembly is sequential over cells with one fixed
//! quadrature rule.

use std::sync::Arc;

use super::geometry::{CellGeometry, ElementTab, GeometryMode};
use super::quadrature::QuadratureRule;
use super::space::FunctionSpace;
use crate::error::{Error, Result};
use crate::mesh::MeshData;
use crate::sparse::{CsrMatrix, RieszPreconditioner, WeightedMeanProjector};

/// Zero matrix over the scalar dofs with one entry per pair of dofs that
/// share a cell.
pub fn scalar_pattern(space: &FunctionSpace) -> CsrMatrix {
    let n = space.n_scalar;
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); n];
    for cell in 0..space.mesh.n_cells {
        let dofs = space.cell_dofs(cell);
        for &r in dofs {
            rows[r as usize].extend_from_slice(dofs);
        }
    }
    for r in rows.iter_mut() {
        r.sort_unstable();
        r.dedup();
    }
    CsrMatrix::from_pattern(n, &rows)
}

#[inline]
fn add_at(m: &mut CsrMatrix, r: u32, c: u32, v: f64) {
    let p = m
        .position(r as usize, c as usize)
        .expect("assembly pattern covers all cell couplings");
    m.vals[p] += v;
}

/// One pass over the mesh handing each cell's geometry and basis tab to the
/// callback.
fn sweep<F>(space: &FunctionSpace, mode: GeometryMode, mut f: F) -> Result<()>
where
    F: FnMut(usize, &CellGeometry, &ElementTab, &[u32]) -> Result<()>,
{
    let mesh = &space.mesh;
    let rule = QuadratureRule::for_shape(mesh.shape());
    let coord_tab = ElementTab::for_coordinates(mesh, &rule);
    let field_tab = ElementTab::new(space.element, &rule);
    let mut geo = CellGeometry::new(mesh, &rule);
    for cell in 0..mesh.n_cells {
        geo.fill(mesh, cell, &coord_tab, &rule, mode)?;
        f(cell, &geo, &field_tab, space.cell_dofs(cell))?;
    }
    Ok(())
}

/// Zero matrix coupling test-space dofs (rows) to trial-space dofs (columns)
/// that share a cell. Both spaces must live on the same mesh.
pub fn mixed_pattern(test_space: &FunctionSpace, trial_space: &FunctionSpace) -> CsrMatrix {
    let mut rows: Vec<Vec<u32>> = vec![Vec::new(); test_space.n_scalar];
    for cell in 0..test_space.mesh.n_cells {
        let trial = trial_space.cell_dofs(cell);
        for &r in test_space.cell_dofs(cell) {
            rows[r as usize].extend_from_slice(trial);
        }
    }
    for r in rows.iter_mut() {
        r.sort_unstable();
        r.dedup();
    }
    CsrMatrix::from_pattern(trial_space.n_scalar, &rows)
}

/// Per-component first-moment matrices C_d with entries
/// integral of (test value) * (d_d trial), one matrix per ambient gradient
/// component. C_d * phi is then the load vector for L2-projecting the
/// gradient of phi into the test space.
pub fn assemble_gradient_moment(
    test_space: &FunctionSpace,
    trial_space: &FunctionSpace,
) -> Result<Vec<CsrMatrix>> {
    if !Arc::ptr_eq(&test_space.mesh, &trial_space.mesh) {
        return Err(Error::InvalidParameter(
            "gradient moment needs both spaces on one mesh".into(),
        ));
    }
    let mesh = &test_space.mesh;
    let dim = mesh.dim();
    let mut out = vec![mixed_pattern(test_space, trial_space); dim];
    let rule = QuadratureRule::for_shape(mesh.shape());
    let coord_tab = ElementTab::for_coordinates(mesh, &rule);
    let test_tab = ElementTab::new(test_space.element, &rule);
    let trial_tab = ElementTab::new(trial_space.element, &rule);
    let na = test_tab.n_basis;
    let nb = trial_tab.n_basis;
    let mut local = vec![vec![0.0f64; na * nb]; dim];
    let mut geo = CellGeometry::new(mesh, &rule);
    for cell in 0..mesh.n_cells {
        geo.fill(mesh, cell, &coord_tab, &rule, GeometryMode::Strict)?;
        for l in local.iter_mut() {
            l.fill(0.0);
        }
        for q in 0..geo.n_q {
            let w = geo.weights[q];
            for b in 0..nb {
                let gb = geo.phys_grad(&trial_tab, q, b);
                for a in 0..na {
                    let va = w * test_tab.value(q, a);
                    for (d, l) in local.iter_mut().enumerate() {
                        l[a * nb + b] += va * gb[d];
                    }
                }
            }
        }
        let rows = test_space.cell_dofs(cell);
        let cols = trial_space.cell_dofs(cell);
        for (d, l) in local.iter().enumerate() {
            for a in 0..na {
                for b in 0..nb {
                    add_at(&mut out[d], rows[a], cols[b], l[a * nb + b]);
                }
            }
        }
    }
    Ok(out)
}

/// Mass, stiffness, and all first-derivative pairings assembled in a single
/// mesh sweep. `grad[j * dim + i]` holds the matrix with entries
/// integral of (d_j test) * (d_i trial); derivatives are ambient components
/// (tangential on the sphere), so `dim` is 2 on the plane and 3 on the
/// sphere. The stiffness equals the sum of the diagonal pairings.
pub struct OperatorSuite {
    pub dim: usize,
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub grad: Vec<CsrMatrix>,
}

impl OperatorSuite {
    #[inline]
    pub fn grad_pair(&self, j: usize, i: usize) -> &CsrMatrix {
        &self.grad[j * self.dim + i]
    }
}

pub fn assemble_suite(space: &FunctionSpace) -> Result<OperatorSuite> {
    let dim = space.mesh.dim();
    let mut mass = scalar_pattern(space);
    let mut stiffness = mass.clone();
    let mut grad = vec![mass.clone(); dim * dim];
    let nb = space.element.n_basis();
    let mut g = vec![[0.0f64; 3]; nb];
    let mut lm = vec![0.0f64; nb * nb];
    let mut lk = vec![0.0f64; nb * nb];
    let mut lg = vec![vec![0.0f64; nb * nb]; dim * dim];
    sweep(space, GeometryMode::Strict, |_, geo, tab, dofs| {
        lm.fill(0.0);
        lk.fill(0.0);
        for l in lg.iter_mut() {
            l.fill(0.0);
        }
        for q in 0..geo.n_q {
            let w = geo.weights[q];
            for (a, ga) in g.iter_mut().enumerate() {
                *ga = geo.phys_grad(tab, q, a);
            }
            for a in 0..nb {
                let va = tab.value(q, a);
                let ga = g[a];
                for b in 0..nb {
                    let vb = tab.value(q, b);
                    let gb = g[b];
                    lm[a * nb + b] += w * va * vb;
                    let mut dot = 0.0;
                    for (jj, l) in lg.iter_mut().enumerate() {
                        let v = w * ga[jj / dim] * gb[jj % dim];
                        l[a * nb + b] += v;
                        if jj / dim == jj % dim {
                            dot += v;
                        }
                    }
                    lk[a * nb + b] += dot;
                }
            }
        }
        for a in 0..nb {
            for b in 0..nb {
                add_at(&mut mass, dofs[a], dofs[b], lm[a * nb + b]);
                add_at(&mut stiffness, dofs[a], dofs[b], lk[a * nb + b]);
                for (l, m) in lg.iter().zip(grad.iter_mut()) {
                    add_at(m, dofs[a], dofs[b], l[a * nb + b]);
                }
            }
        }
        Ok(())
    })?;
    Ok(OperatorSuite {
        dim,
        mass,
        stiffness,
        grad,
    })
}

pub fn assemble_mass(space: &FunctionSpace) -> Result<CsrMatrix> {
    let mut mass = scalar_pattern(space);
    let nb = space.element.n_basis();
    let mut lm = vec![0.0f64; nb * nb];
    sweep(space, GeometryMode::Strict, |_, geo, tab, dofs| {
        lm.fill(0.0);
        for q in 0..geo.n_q {
            let w = geo.weights[q];
            for a in 0..nb {
                let va = tab.value(q, a);
                for b in 0..nb {
                    lm[a * nb + b] += w * va * tab.value(q, b);
                }
            }
        }
        for a in 0..nb {
            for b in 0..nb {
                add_at(&mut mass, dofs[a], dofs[b], lm[a * nb + b]);
            }
        }
        Ok(())
    })?;
    Ok(mass)
}

pub fn assemble_stiffness(space: &FunctionSpace) -> Result<CsrMatrix> {
    let mut k = scalar_pattern(space);
    let nb = space.element.n_basis();
    let mut g = vec![[0.0f64; 3]; nb];
    let mut lk = vec![0.0f64; nb * nb];
    sweep(space, GeometryMode::Strict, |_, geo, tab, dofs| {
        lk.fill(0.0);
        for q in 0..geo.n_q {
            let w = geo.weights[q];
            for (a, ga) in g.iter_mut().enumerate() {
                *ga = geo.phys_grad(tab, q, a);
            }
            for a in 0..nb {
                for b in 0..nb {
                    let dot = g[a][0] * g[b][0] + g[a][1] * g[b][1] + g[a][2] * g[b][2];
                    lk[a * nb + b] += w * dot;
                }
            }
        }
        for a in 0..nb {
            for b in 0..nb {
                add_at(&mut k, dofs[a], dofs[b], lk[a * nb + b]);
            }
        }
        Ok(())
    })?;
    Ok(k)
}

/// Diagonally lumped mass: the mass-matrix diagonal rescaled per cell so
/// each cell contributes its own measure. Unlike row-sum lumping this stays
/// positive for degree-2 triangles, whose vertex functions integrate to
/// zero.
pub fn lumped_mass(space: &FunctionSpace) -> Result<Vec<f64>> {
    let nb = space.element.n_basis();
    let mut out = vec![0.0f64; space.n_scalar];
    let mut local = vec![0.0f64; nb];
    sweep(space, GeometryMode::Strict, |_, geo, tab, dofs| {
        local.fill(0.0);
        let mut cell_measure = 0.0;
        for q in 0..geo.n_q {
            let w = geo.weights[q];
            cell_measure += w;
            for (a, la) in local.iter_mut().enumerate() {
                let v = tab.value(q, a);
                *la += w * v * v;
            }
        }
        let s: f64 = local.iter().sum();
        let factor = cell_measure / s;
        for (a, la) in local.iter().enumerate() {
            out[dofs[a] as usize] += la * factor;
        }
        Ok(())
    })?;
    Ok(out)
}

/// Total measure of the mesh under its own coordinate map.
pub fn mesh_measure(mesh: &MeshData) -> Result<f64> {
    integrate(mesh, |_| 1.0)
}

/// Integral of a pointwise function of position over the mesh.
pub fn integrate<F: FnMut([f64; 3]) -> f64>(mesh: &MeshData, mut f: F) -> Result<f64> {
    let rule = QuadratureRule::for_shape(mesh.shape());
    let coord_tab = ElementTab::for_coordinates(mesh, &rule);
    let mut geo = CellGeometry::new(mesh, &rule);
    let mut total = 0.0;
    for cell in 0..mesh.n_cells {
        geo.fill(mesh, cell, &coord_tab, &rule, GeometryMode::Strict)?;
        let mut acc = 0.0;
        for q in 0..geo.n_q {
            acc += geo.weights[q] * f(geo.points[q]);
        }
        if !acc.is_finite() {
            return Err(Error::NumericFailure { cell });
        }
        total += acc;
    }
    Ok(total)
}

/// Riesz-map block preconditioner for the mixed system on the given spaces:
/// (1/H^2) M + K on the potential block, component mass on the Hessian
/// block, constant mode projected out of the potential output. `h` is the
/// square root of the domain measure.
pub fn riesz_preconditioner(
    phi_space: &Arc<FunctionSpace>,
    sigma_space: &Arc<FunctionSpace>,
    h: f64,
) -> Result<RieszPreconditioner> {
    if !Arc::ptr_eq(&phi_space.mesh, &sigma_space.mesh) {
        return Err(Error::InvalidParameter(
            "potential and Hessian spaces must share a mesh".into(),
        ));
    }
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "domain scale must be positive, got {h}"
        )));
    }
    let mass = assemble_mass(phi_space)?;
    let stiffness = assemble_stiffness(phi_space)?;
    let phi_block = stiffness.add_scaled(&mass, 1.0 / (h * h))?;
    let sigma_mass = if sigma_space.element == phi_space.element {
        mass.clone()
    } else {
        assemble_mass(sigma_space)?
    };
    let projector = WeightedMeanProjector::new(0, lumped_mass(phi_space)?)?;
    let positions = phi_space.node_positions();
    RieszPreconditioner::new(
        &phi_block,
        &sigma_mass,
        sigma_space.components(),
        Some(&positions),
        Some(projector),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::space::ValueShape;
    use crate::mesh::{cubed_sphere, icosahedral_sphere, periodic_unit_square};
    use crate::sparse::SparseCholesky;
    use std::f64::consts::PI;

    fn plane_space(n: usize) -> Arc<FunctionSpace> {
        let mesh = Arc::new(periodic_unit_square(n).unwrap());
        FunctionSpace::new(mesh, 2, ValueShape::Scalar).unwrap()
    }

    #[test]
    fn mass_entries_sum_to_the_measure() {
        let space = plane_space(6);
        let m = assemble_mass(&space).unwrap();
        let total: f64 = m.vals.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12, "sum {total}");
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let space = plane_space(6);
        let k = assemble_stiffness(&space).unwrap();
        let ones = vec![1.0; space.n_scalar];
        let mut out = vec![0.0; space.n_scalar];
        k.matvec(&ones, &mut out);
        let worst = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(worst <= 1e-10, "K 1 reached {worst:e}");
    }

    #[test]
    fn dirichlet_energy_of_interpolated_sine() {
        let space = plane_space(60);
        let k = assemble_stiffness(&space).unwrap();
        let u: Vec<f64> = space
            .node_positions()
            .iter()
            .map(|p| (2.0 * PI * p[0]).sin())
            .collect();
        let mut ku = vec![0.0; space.n_scalar];
        k.matvec(&u, &mut ku);
        let energy: f64 = u.iter().zip(&ku).map(|(a, b)| a * b).sum();
        let exact = 2.0 * PI * PI;
        assert!(
            (energy - exact).abs() <= 1e-4 * exact,
            "energy {energy} vs {exact}"
        );
    }

    #[test]
    fn sphere_measure_converges_to_four_pi() {
        let coarse = mesh_measure(&cubed_sphere(8, 2, 1.0).unwrap()).unwrap();
        let fine = mesh_measure(&cubed_sphere(16, 2, 1.0).unwrap()).unwrap();
        let exact = 4.0 * PI;
        let ec = (coarse - exact).abs();
        let ef = (fine - exact).abs();
        assert!(ef <= 1e-4 * exact, "fine error {ef:e}");
        assert!(ef < ec, "no improvement: {ec:e} -> {ef:e}");
    }

    #[test]
    fn flat_icosahedron_measure_is_exact() {
        let mesh = icosahedral_sphere(0, 1, 1.0).unwrap();
        let measure = mesh_measure(&mesh).unwrap();
        let exact = 80.0 * 3.0f64.sqrt() / (10.0 + 2.0 * 5.0f64.sqrt());
        assert!((measure - exact).abs() <= 1e-12, "measure {measure}");
    }

    #[test]
    fn suite_matches_individual_assemblies() {
        let space = plane_space(5);
        let suite = assemble_suite(&space).unwrap();
        let mass = assemble_mass(&space).unwrap();
        let k = assemble_stiffness(&space).unwrap();
        for (a, b) in [(&suite.mass, &mass), (&suite.stiffness, &k)] {
            assert_eq!(a.vals.len(), b.vals.len());
            for (x, y) in a.vals.iter().zip(&b.vals) {
                assert!((x - y).abs() <= 1e-14);
            }
        }
        // Stiffness is the sum of diagonal derivative pairings.
        let sum = suite
            .grad_pair(0, 0)
            .add_scaled(suite.grad_pair(1, 1), 1.0)
            .unwrap();
        for (x, y) in sum.vals.iter().zip(&k.vals) {
            assert!((x - y).abs() <= 1e-13);
        }
    }

    #[test]
    fn derivative_pairings_are_mutual_transposes() {
        let space = plane_space(4);
        let suite = assemble_suite(&space).unwrap();
        let n = space.n_scalar;
        let x: Vec<f64> = (0..n).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 5 % 11) as f64) - 5.0).collect();
        let mut tmp = vec![0.0; n];
        suite.grad_pair(0, 1).matvec(&y, &mut tmp);
        let xgy: f64 = x.iter().zip(&tmp).map(|(a, b)| a * b).sum();
        suite.grad_pair(1, 0).matvec(&x, &mut tmp);
        let ygx: f64 = y.iter().zip(&tmp).map(|(a, b)| a * b).sum();
        assert!((xgy - ygx).abs() <= 1e-12 * (1.0 + xgy.abs()));
    }

    #[test]
    fn weak_second_derivative_recovery_is_second_order() {
        // sigma_00 = -M^{-1} G^{(0,0)} phi recovers d2 phi / dx2 weakly; the
        // L2 error against the interpolated exact second derivative should
        // shrink at close to second order under refinement.
        let mut errs = Vec::new();
        for n in [15usize, 30, 60] {
            let space = plane_space(n);
            let suite = assemble_suite(&space).unwrap();
            let positions = space.node_positions();
            let phi: Vec<f64> = positions
                .iter()
                .map(|p| 1e-3 * (2.0 * PI * p[0]).cos() * (2.0 * PI * p[1]).cos())
                .collect();
            let mut rhs = vec![0.0; space.n_scalar];
            suite.grad_pair(0, 0).matvec(&phi, &mut rhs);
            for v in &mut rhs {
                *v = -*v;
            }
            let chol = SparseCholesky::factor(&suite.mass, Some(&positions)).unwrap();
            let sigma = chol.solve_vec(&rhs);
            let exact: Vec<f64> = positions
                .iter()
                .map(|p| -4e-3 * PI * PI * (2.0 * PI * p[0]).cos() * (2.0 * PI * p[1]).cos())
                .collect();
            let e: Vec<f64> = sigma.iter().zip(&exact).map(|(a, b)| a - b).collect();
            let mut me = vec![0.0; e.len()];
            suite.mass.matvec(&e, &mut me);
            let l2: f64 = e.iter().zip(&me).map(|(a, b)| a * b).sum::<f64>().sqrt();
            errs.push(l2);
        }
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "errors {errs:?}");
        // Observed order over the whole 15 -> 60 study (two halvings).
        let order = (errs[0] / errs[2]).log2() / 2.0;
        assert!(order >= 1.9, "order {order:.3} from errors {errs:?}");
    }

    #[test]
    fn gradient_moment_projects_analytic_gradient() {
        // Project the gradient of a Q2 interpolant of sin(2 pi x) into Q1;
        // nodal values should track 2 pi cos(2 pi x) with error shrinking
        // under refinement.
        let mut max_errs = Vec::new();
        for n in [12usize, 24] {
            let mesh = Arc::new(periodic_unit_square(n).unwrap());
            let q2 = FunctionSpace::new(mesh.clone(), 2, ValueShape::Scalar).unwrap();
            let q1 = FunctionSpace::new(mesh, 1, ValueShape::Scalar).unwrap();
            let phi: Vec<f64> = q2
                .node_positions()
                .iter()
                .map(|p| (2.0 * PI * p[0]).sin())
                .collect();
            let moments = assemble_gradient_moment(&q1, &q2).unwrap();
            let m1 = assemble_mass(&q1).unwrap();
            let chol = SparseCholesky::factor(&m1, Some(&q1.node_positions())).unwrap();
            let mut rhs = vec![0.0; q1.n_scalar];
            moments[0].matvec(&phi, &mut rhs);
            let gx = chol.solve_vec(&rhs);
            let max_err = q1
                .node_positions()
                .iter()
                .zip(&gx)
                .map(|(p, g)| (g - 2.0 * PI * (2.0 * PI * p[0]).cos()).abs())
                .fold(0.0f64, f64::max);
            max_errs.push(max_err);
            // The y-derivative of a function of x alone projects to zero.
            moments[1].matvec(&phi, &mut rhs);
            let gy = chol.solve_vec(&rhs);
            assert!(gy.iter().all(|v| v.abs() <= 1e-10));
        }
        assert!(max_errs[1] < 0.5 * max_errs[0], "errors {max_errs:?}");
        assert!(max_errs[1] <= 0.05);
    }

    #[test]
    fn lumped_mass_positive_on_degree2_triangles() {
        let mesh = Arc::new(icosahedral_sphere(2, 2, 1.0).unwrap());
        let space = FunctionSpace::new(mesh.clone(), 2, ValueShape::Scalar).unwrap();
        let w = lumped_mass(&space).unwrap();
        assert!(w.iter().all(|&v| v > 0.0));
        let total: f64 = w.iter().sum();
        let measure = mesh_measure(&mesh).unwrap();
        assert!((total - measure).abs() <= 1e-12 * measure);
    }

    #[test]
    fn riesz_preconditioner_is_built_for_shared_mesh_spaces() {
        use crate::sparse::LinearOp;
        let mesh = Arc::new(periodic_unit_square(5).unwrap());
        let phi = FunctionSpace::new(mesh.clone(), 2, ValueShape::Scalar).unwrap();
        let sigma = FunctionSpace::new(mesh, 2, ValueShape::Tensor(2)).unwrap();
        let p = riesz_preconditioner(&phi, &sigma, 1.0).unwrap();
        assert_eq!(p.n_rows(), phi.n_scalar * 5);
        let x = vec![0.0; p.n_rows()];
        let mut y = vec![1.0; p.n_rows()];
        p.apply(&x, &mut y);
        assert!(y.iter().all(|&v| v == 0.0));
    }
}
