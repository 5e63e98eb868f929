//! Mesh generation on the sphere of radius R. The physical mesh is the
//! image of the computational mesh under x = exp(grad phi) xi, the
//! exponential map along the tangential surface gradient, with the
//! auxiliary tensor sigma standing in for the gradient of that map in
//! ambient components:
//!
//!   (v,   m det(sigma P + (x/R) otimes (xi/R)) - theta) = 0
//!   (tau, sigma) + (div tau, x)                         = 0
//!
//! P = I - k otimes k is the tangent projector at xi. sigma is a 3x3
//! tensor field stored in row-major component blocks [00, 01, ..., 22]
//! after the scalar potential.

use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_gradient_moment, assemble_mass, assemble_suite, lumped_mass, riesz_preconditioner,
    scalar_pattern, CellGeometry, ElementTab, FunctionSpace, GeometryMode, OperatorSuite,
    QuadratureRule, ValueShape,
};
use crate::la::{self, Mat3, Vec3};
use crate::mesh::MeshData;
use crate::monitor::MonitorSpec;
use crate::sparse::{
    gmres_solve, pcg_solve, BlockOperator, CsrMatrix, KrylovConfig, RieszPreconditioner,
    SparseCholesky, WeightedMeanProjector,
};

use super::{
    golden_section_search, norm, norm_sq, DiagnosticsRecord, DriverErr, EvalOut, FailureKind,
    Method, NonlinearConfig, SolveFailure, SolveReport, DIVERGENCE_FACTOR, LAMBDA_MIN,
};

/// Below this |w|/R the map switches to its series limit xi + w; the
/// second-order remainder is under round-off there.
const EXP_SERIES_TOL: f64 = 1e-8;
/// Series switch for the derivative, where the remainder is fourth order.
const EXP_DERIV_SERIES_TOL: f64 = 1e-6;
/// Tangency tolerance relative to R |w|.
const TANGENCY_TOL: f64 = 1e-10;

/// Geodesic exponential map: walk from `xi` a distance |w| along the great
/// circle tangent to `w`. The result is renormalized onto the sphere.
pub fn exp_map(xi: Vec3, w: Vec3, radius: f64) -> Result<Vec3> {
    if !(radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "exponential map needs a positive radius, got {radius}"
        )));
    }
    let s = la::norm3(w);
    let dot = la::dot3(w, xi);
    if dot.abs() > TANGENCY_TOL * radius * s {
        return Err(Error::NonTangent { dot: dot.abs() });
    }
    let x = if s / radius < EXP_SERIES_TOL {
        la::add3(xi, w)
    } else {
        let c = (s / radius).cos();
        let k = radius * (s / radius).sin() / s;
        [
            c * xi[0] + k * w[0],
            c * xi[1] + k * w[1],
            c * xi[2] + k * w[2],
        ]
    };
    let nrm = la::norm3(x);
    if !(nrm > 0.0) {
        return Err(Error::InvalidParameter(
            "exponential map base point is not on the sphere".into(),
        ));
    }
    Ok(la::scale3(x, radius / nrm))
}

/// Derivative of [`exp_map`] with respect to the tangent vector, as a 3x3
/// matrix acting on tangent variations of `w`:
///
///   D = -(sin(s/R)/R) xi (x) u + cos(s/R) u (x) u + (R sin(s/R)/s)(I - u (x) u)
///
/// with s = |w| and u = w/s. Near s = 0 the series form
/// I - xi (x) w / R^2 - s^2/(6 R^2) I - w (x) w / (3 R^2) is used.
pub fn exp_map_derivative(xi: Vec3, w: Vec3, radius: f64) -> Mat3 {
    let s = la::norm3(w);
    let r2 = radius * radius;
    let mut d = [0.0f64; 9];
    if s / radius < EXP_DERIV_SERIES_TOL {
        let shrink = 1.0 - s * s / (6.0 * r2);
        for i in 0..3 {
            for j in 0..3 {
                d[i * 3 + j] = -xi[i] * w[j] / r2 - w[i] * w[j] / (3.0 * r2);
            }
            d[i * 3 + i] += shrink;
        }
    } else {
        let u = la::scale3(w, 1.0 / s);
        let sr = (s / radius).sin();
        let cr = (s / radius).cos();
        let t = radius * sr / s;
        for i in 0..3 {
            for j in 0..3 {
                d[i * 3 + j] = (cr - t) * u[i] * u[j] - sr / radius * xi[i] * u[j];
            }
            d[i * 3 + i] += t;
        }
    }
    d
}

pub struct SphereSolver {
    mesh: Arc<MeshData>,
    phi_space: Arc<FunctionSpace>,
    /// Degree-1 space carrying the monitor samples (nodes are the vertices).
    m_space: Arc<FunctionSpace>,
    /// Scalar space at the mesh's coordinate degree; the recovered tangent
    /// displacement lives in three copies of it.
    coord_space: Arc<FunctionSpace>,
    sigma_space: Arc<FunctionSpace>,
    monitor: MonitorSpec,
    suite: OperatorSuite,
    mass_ones: Vec<f64>,
    mass_chol: SparseCholesky,
    coord_mass_chol: SparseCholesky,
    moment: Vec<CsrMatrix>,
    projector: WeightedMeanProjector,
    /// Euclidean mean remover for the singular Poisson solves; the CG
    /// projector must be orthogonal, the weighted one is only a gauge.
    mean_projector: WeightedMeanProjector,
    radius: f64,
    /// Per-vertex reference positions; when set, the RMS geodesic deviation
    /// from them is reported in the diagnostics.
    reference_targets: Option<Vec<[f64; 3]>>,
    phi: Vec<f64>,
    sigma: Vec<f64>,
    theta: f64,
    physical_coords: Vec<[f64; 3]>,
    monitor_nodes: Vec<f64>,
    iteration: usize,
}

impl SphereSolver {
    pub fn new(mesh: Arc<MeshData>, monitor: MonitorSpec) -> Result<SphereSolver> {
        if !mesh.is_sphere() {
            return Err(Error::InvalidParameter(
                "sphere solver needs a sphere mesh".into(),
            ));
        }
        let radius = mesh.radius;
        monitor.eval_sphere([0.0, 0.0, radius], radius)?;
        let phi_space = FunctionSpace::new(mesh.clone(), 2, ValueShape::Scalar)?;
        let m_space = FunctionSpace::new(mesh.clone(), 1, ValueShape::Scalar)?;
        let coord_space = FunctionSpace::new(mesh.clone(), mesh.coord_degree, ValueShape::Scalar)?;
        let sigma_space = FunctionSpace::new(mesh.clone(), 2, ValueShape::Tensor(3))?;
        let suite = assemble_suite(&phi_space)?;
        let n = phi_space.n_scalar;
        let mut mass_ones = vec![0.0; n];
        suite.mass.matvec(&vec![1.0; n], &mut mass_ones);
        let mass_chol = SparseCholesky::factor(&suite.mass, Some(&phi_space.node_positions()))?;
        let coord_mass = assemble_mass(&coord_space)?;
        let coord_mass_chol =
            SparseCholesky::factor(&coord_mass, Some(&coord_space.node_positions()))?;
        let moment = assemble_gradient_moment(&coord_space, &phi_space)?;
        let projector = WeightedMeanProjector::new(0, lumped_mass(&phi_space)?)?;
        let mean_projector = WeightedMeanProjector::new(0, vec![1.0; n])?;
        let mut solver = SphereSolver {
            mesh,
            phi_space,
            m_space,
            coord_space,
            sigma_space,
            monitor,
            suite,
            mass_ones,
            mass_chol,
            coord_mass_chol,
            moment,
            projector,
            mean_projector,
            radius,
            reference_targets: None,
            phi: vec![0.0; n],
            sigma: Vec::new(),
            theta: 1.0,
            physical_coords: Vec::new(),
            monitor_nodes: Vec::new(),
            iteration: 0,
        };
        solver.sigma = solver.sigma_from_phi(&solver.phi)?;
        solver.refresh()?;
        Ok(solver)
    }

    pub fn mesh(&self) -> &Arc<MeshData> {
        &self.mesh
    }

    pub fn phi_space(&self) -> &Arc<FunctionSpace> {
        &self.phi_space
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Physical positions of all coordinate nodes; the first `n_vertices`
    /// entries are the vertices.
    pub fn physical_coords(&self) -> &[[f64; 3]] {
        &self.physical_coords
    }

    pub fn monitor(&self) -> &MonitorSpec {
        &self.monitor
    }

    /// Per-vertex reference positions for the RMS deviation diagnostic.
    pub fn set_reference_targets(&mut self, targets: Vec<[f64; 3]>) -> Result<()> {
        if targets.len() != self.mesh.n_vertices {
            return Err(Error::ShapeMismatch {
                expected: self.mesh.n_vertices,
                got: targets.len(),
                context: "reference target positions",
            });
        }
        self.reference_targets = Some(targets);
        Ok(())
    }

    /// Replace the state; coordinates, monitor values, and theta are
    /// recomputed. No gauge fixing is applied here.
    pub fn set_state(&mut self, phi: Vec<f64>, sigma: Vec<f64>) -> Result<()> {
        let n = self.phi_space.n_scalar;
        if phi.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: phi.len(),
                context: "potential coefficients",
            });
        }
        if sigma.len() != 9 * n {
            return Err(Error::ShapeMismatch {
                expected: 9 * n,
                got: sigma.len(),
                context: "map gradient coefficients",
            });
        }
        self.phi = phi;
        self.sigma = sigma;
        self.iteration = 0;
        self.refresh()
    }

    /// Set phi and derive sigma from the weak gradient relation.
    pub fn set_potential(&mut self, phi: Vec<f64>) -> Result<()> {
        let sigma = self.sigma_from_phi(&phi)?;
        self.set_state(phi, sigma)
    }

    /// Evaluate diagnostics at the current state without stepping.
    pub fn diagnose(&mut self) -> Result<DiagnosticsRecord> {
        let (_, rec) = self.observe(None)?;
        Ok(rec)
    }

    fn refresh(&mut self) -> Result<()> {
        let (_, _) = self.observe(None)?;
        Ok(())
    }

    /// Nodal tangent displacement: the pointwise surface gradient of phi,
    /// L2-projected into the coordinate-degree continuous space and made
    /// exactly tangential at each node.
    fn tangent_displacement(&self, phi: &[f64]) -> Result<Vec<[f64; 3]>> {
        let nc = self.coord_space.n_scalar;
        let mut rhs = vec![0.0; nc];
        let mut disp = [Vec::new(), Vec::new(), Vec::new()];
        for d in 0..3 {
            self.moment[d].matvec(phi, &mut rhs);
            disp[d] = self.coord_mass_chol.solve_vec(&rhs);
        }
        let mut out = Vec::with_capacity(nc);
        for v in 0..nc {
            let k = la::normalize3(self.mesh.node_coord(v));
            let mut w = [disp[0][v], disp[1][v], disp[2][v]];
            // Two projection passes leave the radial residue at round-off,
            // which the exponential map's tangency gate requires.
            for _ in 0..2 {
                let r = la::dot3(w, k);
                w = la::sub3(w, la::scale3(k, r));
            }
            out.push(w);
        }
        Ok(out)
    }

    /// Recovered physical positions of all coordinate nodes: the tangent
    /// displacement pushed through the exponential map.
    fn coords_for(&self, phi: &[f64]) -> Result<Vec<[f64; 3]>> {
        let disp = self.tangent_displacement(phi)?;
        let mut coords = Vec::with_capacity(disp.len());
        for (v, w) in disp.into_iter().enumerate() {
            coords.push(exp_map(self.mesh.node_coord(v), w, self.radius)?);
        }
        Ok(coords)
    }

    fn monitor_values(&self, coords: &[[f64; 3]]) -> Result<Vec<f64>> {
        (0..self.m_space.n_scalar)
            .map(|v| self.monitor.eval_sphere(coords[v], self.radius))
            .collect()
    }

    /// sigma and the surface gradient of phi at one quadrature point.
    fn point_state(
        &self,
        sigma: &[f64],
        phi: &[f64],
        phi_dofs: &[u32],
        phi_tab: &ElementTab,
        geo: &CellGeometry,
        q: usize,
    ) -> (Mat3, Vec3) {
        let n = self.phi_space.n_scalar;
        let mut s = [0.0f64; 9];
        let mut g = [0.0f64; 3];
        for (a, &dof) in phi_dofs.iter().enumerate() {
            let v = phi_tab.value(q, a);
            let dof = dof as usize;
            for (c, sc) in s.iter_mut().enumerate() {
                *sc += v * sigma[c * n + dof];
            }
            let pg = geo.phys_grad(phi_tab, q, a);
            for d in 0..3 {
                g[d] += phi[dof] * pg[d];
            }
        }
        (s, g)
    }

    /// Area-ratio matrix A = sigma P + (x/R) (x) (xi/R) at a quadrature
    /// point, along with the mapped point x.
    fn point_map(&self, s: &Mat3, g: Vec3, n_hat: Vec3) -> Result<(Mat3, Vec3)> {
        let xi = la::scale3(n_hat, self.radius);
        let p = la::tangent_projector(n_hat);
        let mut w = g;
        let r = la::dot3(w, n_hat);
        w = la::sub3(w, la::scale3(n_hat, r));
        let x = exp_map(xi, w, self.radius)?;
        let mut a = la::mat3_mul(s, &p);
        let xo = la::outer3(la::scale3(x, 1.0 / self.radius), n_hat);
        for (ai, oi) in a.iter_mut().zip(xo.iter()) {
            *ai += oi;
        }
        Ok((a, x))
    }

    /// One sweep assembling the V-block residual together with theta, the
    /// per-cell equidistribution measures, and the minimum area ratio.
    fn eval_v(&self, phi: &[f64], sigma: &[f64], m_nodes: &[f64]) -> Result<EvalOut> {
        let n = self.phi_space.n_scalar;
        let rule = QuadratureRule::for_shape(self.mesh.shape());
        let coord_tab = ElementTab::for_coordinates(&self.mesh, &rule);
        let phi_tab = ElementTab::new(self.phi_space.element, &rule);
        let m_tab = ElementTab::new(self.m_space.element, &rule);
        let mut geo = CellGeometry::new(&self.mesh, &rule);
        let mut u = vec![0.0; n];
        let mut cell_ratios = Vec::with_capacity(self.mesh.n_cells);
        let mut total_mass = 0.0;
        let mut total_area = 0.0;
        let mut min_det = f64::INFINITY;
        for cell in 0..self.mesh.n_cells {
            geo.fill(&self.mesh, cell, &coord_tab, &rule, GeometryMode::Strict)?;
            let phi_dofs = self.phi_space.cell_dofs(cell);
            let m_dofs = self.m_space.cell_dofs(cell);
            let mut cell_mass = 0.0;
            let mut cell_area = 0.0;
            for q in 0..geo.n_q {
                let w = geo.weights[q];
                let (s, g) = self.point_state(sigma, phi, phi_dofs, &phi_tab, &geo, q);
                let (a, _x) = self.point_map(&s, g, geo.normals[q])?;
                let det = la::det3(a);
                let mut m = 0.0;
                for (b, &dof) in m_dofs.iter().enumerate() {
                    m += m_tab.value(q, b) * m_nodes[dof as usize];
                }
                let integrand = m * det;
                if !integrand.is_finite() {
                    return Err(Error::NumericFailure { cell });
                }
                min_det = min_det.min(det);
                cell_mass += w * integrand;
                cell_area += w;
                for (b, &dof) in phi_dofs.iter().enumerate() {
                    u[dof as usize] += w * integrand * phi_tab.value(q, b);
                }
            }
            cell_ratios.push(cell_mass / cell_area);
            total_mass += cell_mass;
            total_area += cell_area;
        }
        let theta = total_mass / total_area;
        if !(theta > 0.0) {
            return Err(Error::NonpositiveTheta { theta });
        }
        let mut r_v = u;
        for (r, ms) in r_v.iter_mut().zip(&self.mass_ones) {
            *r -= theta * ms;
        }
        let normalized = norm(&r_v) / (theta * norm(&self.mass_ones));
        let mean = cell_ratios.iter().sum::<f64>() / cell_ratios.len() as f64;
        let var = cell_ratios
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / cell_ratios.len() as f64;
        Ok(EvalOut {
            r_v,
            theta,
            normalized,
            cv: var.sqrt() / mean,
            min_det,
        })
    }

    /// Load vector of the gradient relation: component block (i, j) holds
    /// the integrals of (grad psi_p)_j x_i with x the mapped point.
    fn map_load(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let n = self.phi_space.n_scalar;
        let rule = QuadratureRule::for_shape(self.mesh.shape());
        let coord_tab = ElementTab::for_coordinates(&self.mesh, &rule);
        let phi_tab = ElementTab::new(self.phi_space.element, &rule);
        let mut geo = CellGeometry::new(&self.mesh, &rule);
        let mut load = vec![0.0; 9 * n];
        for cell in 0..self.mesh.n_cells {
            geo.fill(&self.mesh, cell, &coord_tab, &rule, GeometryMode::Strict)?;
            let phi_dofs = self.phi_space.cell_dofs(cell);
            for q in 0..geo.n_q {
                let wq = geo.weights[q];
                let n_hat = geo.normals[q];
                let xi = la::scale3(n_hat, self.radius);
                let mut g = [0.0f64; 3];
                for (a, &dof) in phi_dofs.iter().enumerate() {
                    let pg = geo.phys_grad(&phi_tab, q, a);
                    for d in 0..3 {
                        g[d] += phi[dof as usize] * pg[d];
                    }
                }
                let r = la::dot3(g, n_hat);
                let w = la::sub3(g, la::scale3(n_hat, r));
                let x = exp_map(xi, w, self.radius)?;
                for (p, &dof) in phi_dofs.iter().enumerate() {
                    let pg = geo.phys_grad(&phi_tab, q, p);
                    for i in 0..3 {
                        for j in 0..3 {
                            load[(i * 3 + j) * n + dof as usize] += wq * pg[j] * x[i];
                        }
                    }
                }
            }
        }
        Ok(load)
    }

    fn sigma_from_phi(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let n = self.phi_space.n_scalar;
        let load = self.map_load(phi)?;
        let mut sigma = vec![0.0; 9 * n];
        for c in 0..9 {
            let x = self.mass_chol.solve_vec(&load[c * n..(c + 1) * n]);
            for (dst, v) in sigma[c * n..(c + 1) * n].iter_mut().zip(&x) {
                *dst = -v;
            }
        }
        Ok(sigma)
    }

    /// Residual of the gradient relation: M sigma_c + load_c(phi) per
    /// component block.
    fn sigma_residual(&self, phi: &[f64], sigma: &[f64]) -> Result<Vec<f64>> {
        let n = self.phi_space.n_scalar;
        let mut out = self.map_load(phi)?;
        for c in 0..9 {
            self.suite
                .mass
                .matvec_add(&sigma[c * n..(c + 1) * n], 1.0, &mut out[c * n..(c + 1) * n]);
        }
        Ok(out)
    }

    fn rms_deviation(&self, coords: &[[f64; 3]]) -> Option<f64> {
        let targets = self.reference_targets.as_ref()?;
        let nv = self.mesh.n_vertices;
        let mut acc = 0.0;
        for v in 0..nv {
            let d = la::geodesic(coords[v], targets[v], self.radius);
            acc += d * d;
        }
        Some((acc / nv as f64).sqrt())
    }

    /// Refresh coordinates, monitor values, and theta from the current
    /// state and produce a diagnostics row.
    fn observe(&mut self, step_length: Option<f64>) -> Result<(EvalOut, DiagnosticsRecord)> {
        let coords = self.coords_for(&self.phi)?;
        let m_nodes = self.monitor_values(&coords)?;
        let ev = self.eval_v(&self.phi, &self.sigma, &m_nodes)?;
        let rms_deviation = self.rms_deviation(&coords);
        self.physical_coords = coords;
        self.monitor_nodes = m_nodes;
        self.theta = ev.theta;
        let rec = DiagnosticsRecord {
            iteration: self.iteration,
            residual: ev.normalized,
            equidistribution_cv: ev.cv,
            rms_deviation,
            theta: ev.theta,
            step_length,
            min_area_ratio: ev.min_det,
        };
        Ok((ev, rec))
    }

    /// Full residual norm at a trial state, with monitor and theta
    /// recomputed there (the true residual, used by the line search).
    fn residual_norm_at(&self, phi: &[f64], sigma: &[f64]) -> Result<f64> {
        let coords = self.coords_for(phi)?;
        let m_nodes = self.monitor_values(&coords)?;
        let ev = self.eval_v(phi, sigma, &m_nodes)?;
        let r_sig = self.sigma_residual(phi, sigma)?;
        Ok((norm_sq(&ev.r_v) + norm_sq(&r_sig)).sqrt())
    }

    fn poisson_update(
        &self,
        r_v: &[f64],
        dt: f64,
        precond: &SparseCholesky,
    ) -> Result<Vec<f64>> {
        let n = self.phi_space.n_scalar;
        let mut rhs = vec![0.0; n];
        self.suite.stiffness.matvec(&self.phi, &mut rhs);
        for (r, f) in rhs.iter_mut().zip(r_v) {
            *r += dt * f;
        }
        let cfg = KrylovConfig::cg(1e-12, 10_000)?;
        let (mut phi_new, _) = pcg_solve(
            &self.suite.stiffness,
            &rhs,
            &cfg,
            Some(precond),
            Some(&self.mean_projector),
        )?;
        self.projector.project(&mut phi_new);
        Ok(phi_new)
    }

    fn poisson_preconditioner(&self) -> Result<SparseCholesky> {
        let shifted = self.suite.stiffness.add_scaled(&self.suite.mass, 1.0)?;
        SparseCholesky::factor(&shifted, Some(&self.phi_space.node_positions()))
    }

    /// One relaxation step; diagnostics are evaluated before the update.
    pub fn relaxation_step(&mut self, dt: f64, precond: &SparseCholesky) -> Result<DiagnosticsRecord> {
        let (ev, rec) = self.observe(None)?;
        let phi_new = self.poisson_update(&ev.r_v, dt, precond)?;
        self.sigma = self.sigma_from_phi(&phi_new)?;
        self.phi = phi_new;
        self.iteration += 1;
        Ok(rec)
    }

    pub fn solve(&mut self, cfg: &NonlinearConfig) -> std::result::Result<SolveReport, SolveFailure> {
        if let Err(e) = cfg.validate() {
            let (kind, message) = SolveFailure::classify(e);
            return Err(SolveFailure {
                kind,
                message,
                history: Vec::new(),
                loop_seconds: 0.0,
            });
        }
        let mut history = Vec::new();
        let t0 = Instant::now();
        let inner = match cfg.method {
            Method::Relaxation => self.relax_inner(cfg, &mut history, t0),
            Method::QuasiNewton => self.qn_inner(cfg, &mut history, t0),
        };
        inner.map_err(|e| {
            let (kind, message) = match e {
                DriverErr::Known(kind, message) => (kind, message),
                DriverErr::Core(err) => SolveFailure::classify(err),
            };
            SolveFailure {
                kind,
                message,
                history: std::mem::take(&mut history),
                loop_seconds: t0.elapsed().as_secs_f64(),
            }
        })
    }

    fn relax_inner(
        &mut self,
        cfg: &NonlinearConfig,
        history: &mut Vec<DiagnosticsRecord>,
        t0: Instant,
    ) -> std::result::Result<SolveReport, DriverErr> {
        let precond = self.poisson_preconditioner()?;
        let mut initial = f64::NAN;
        let mut last = f64::NAN;
        loop {
            let (ev, rec) = match self.observe(None) {
                Ok(out) => out,
                Err(err) if super::blowup_while_growing(&err, initial, last) => {
                    return Err(DriverErr::Known(
                        FailureKind::Diverged,
                        format!(
                            "state blew up after the residual grew from {initial:e} to {last:e}: {err}"
                        ),
                    ));
                }
                Err(err) => return Err(err.into()),
            };
            history.push(rec);
            last = ev.normalized;
            if ev.normalized <= cfg.tol {
                return Ok(SolveReport {
                    iterations: self.iteration,
                    final_residual: ev.normalized,
                    history: history.clone(),
                    loop_seconds: t0.elapsed().as_secs_f64(),
                });
            }
            if initial.is_nan() {
                initial = ev.normalized;
            }
            if !ev.normalized.is_finite() || ev.normalized > DIVERGENCE_FACTOR * initial {
                return Err(DriverErr::Known(
                    FailureKind::Diverged,
                    format!(
                        "residual {:e} after {} steps exceeds {DIVERGENCE_FACTOR} times the initial {:e}",
                        ev.normalized, self.iteration, initial
                    ),
                ));
            }
            if self.iteration >= cfg.max_iters {
                return Err(DriverErr::Known(
                    FailureKind::MaxIters,
                    format!(
                        "residual {:e} after the {} allowed relaxation steps",
                        ev.normalized, cfg.max_iters
                    ),
                ));
            }
            let phi_new = self.poisson_update(&ev.r_v, cfg.dt, &precond)?;
            self.sigma = self.sigma_from_phi(&phi_new)?;
            self.phi = phi_new;
            self.iteration += 1;
        }
    }

    /// Zero-valued Jacobian skeleton. The (v, dphi) block is nonempty here,
    /// unlike the plane: dphi moves the mapped point through the
    /// exponential map.
    fn jacobian_skeleton(&self) -> Result<BlockOperator> {
        let pattern = scalar_pattern(&self.phi_space);
        let top_left = pattern.clone();
        let top_right = CsrMatrix::hstack(&[&pattern; 9])?;
        let bottom_left = CsrMatrix::vstack(&[&pattern; 9])?;
        let bottom_right = CsrMatrix::block_diag(&[&self.suite.mass; 9]);
        let mut jac = BlockOperator::new([
            [Some(top_left), Some(top_right)],
            [Some(bottom_left), Some(bottom_right)],
        ])?;
        jac.constant_phi_nullspace = true;
        Ok(jac)
    }

    /// Refill the three state-dependent Jacobian blocks in one sweep, with
    /// the monitor and theta frozen:
    ///
    ///   (v, dphi)      psi_p m g . grad psi_q,  g = P D^T adj(A)^T xi / R^2
    ///   (v, dsigma_ij) psi_p m (P adj A)_ji psi_q
    ///   (tau_ij, dphi) (grad psi_p)_j (D P grad psi_q)_i
    fn fill_jacobian(&self, m_nodes: &[f64], jac: &mut BlockOperator) -> Result<()> {
        let n = self.phi_space.n_scalar;
        let blocks = jac.blocks_mut();
        let [row0, row1] = blocks;
        let [b00, b01] = row0;
        let [b10, _] = row1;
        let b00 = b00.as_mut().expect("skeleton holds the (v, dphi) block");
        let b01 = b01.as_mut().expect("skeleton holds the (v, dsigma) block");
        let b10 = b10.as_mut().expect("skeleton holds the (tau, dphi) block");
        b00.set_zero();
        b01.set_zero();
        b10.set_zero();
        let rule = QuadratureRule::for_shape(self.mesh.shape());
        let coord_tab = ElementTab::for_coordinates(&self.mesh, &rule);
        let phi_tab = ElementTab::new(self.phi_space.element, &rule);
        let m_tab = ElementTab::new(self.m_space.element, &rule);
        let mut geo = CellGeometry::new(&self.mesh, &rule);
        let nb = phi_tab.n_basis;
        let mut grads = vec![[0.0f64; 3]; nb];
        let mut dpg = vec![[0.0f64; 3]; nb];
        let mut loc00 = vec![0.0f64; nb * nb];
        let mut loc01 = vec![0.0f64; 9 * nb * nb];
        let mut loc10 = vec![0.0f64; 9 * nb * nb];
        for cell in 0..self.mesh.n_cells {
            geo.fill(&self.mesh, cell, &coord_tab, &rule, GeometryMode::Strict)?;
            let phi_dofs = self.phi_space.cell_dofs(cell);
            let m_dofs = self.m_space.cell_dofs(cell);
            loc00.fill(0.0);
            loc01.fill(0.0);
            loc10.fill(0.0);
            for q in 0..geo.n_q {
                let wq = geo.weights[q];
                let n_hat = geo.normals[q];
                let xi = la::scale3(n_hat, self.radius);
                let p_mat = la::tangent_projector(n_hat);
                for (a, ga) in grads.iter_mut().enumerate() {
                    *ga = geo.phys_grad(&phi_tab, q, a);
                }
                let (s, g) = self.point_state(&self.sigma, &self.phi, phi_dofs, &phi_tab, &geo, q);
                let (a_mat, _) = self.point_map(&s, g, n_hat)?;
                let adj = la::adj3(a_mat);
                let mut m = 0.0;
                for (b, &dof) in m_dofs.iter().enumerate() {
                    m += m_tab.value(q, b) * m_nodes[dof as usize];
                }
                let mut w = g;
                let r = la::dot3(w, n_hat);
                w = la::sub3(w, la::scale3(n_hat, r));
                let d_mat = exp_map_derivative(xi, w, self.radius);
                let dp = la::mat3_mul(&d_mat, &p_mat);
                for (b, gb) in grads.iter().enumerate() {
                    dpg[b] = la::mat3_vec(&dp, *gb);
                }
                // Direction of d(det A) under dphi, through the map point:
                // tr(adj(A) (dx/R) (x) (xi/R)) with dx = D P grad dphi.
                let t1 = la::mat3_tvec(&adj, xi);
                let t2 = la::mat3_tvec(&dp, t1);
                let g_vec = la::scale3(t2, 1.0 / (self.radius * self.radius));
                let padj = la::mat3_mul(&p_mat, &adj);
                for a in 0..nb {
                    let va = wq * phi_tab.value(q, a);
                    let ga = grads[a];
                    for b in 0..nb {
                        loc00[a * nb + b] += va * m * la::dot3(g_vec, grads[b]);
                        let vab = va * m * phi_tab.value(q, b);
                        for i in 0..3 {
                            for j in 0..3 {
                                let c = i * 3 + j;
                                loc01[(c * nb + a) * nb + b] += vab * padj[j * 3 + i];
                                loc10[(c * nb + a) * nb + b] += wq * ga[j] * dpg[b][i];
                            }
                        }
                    }
                }
            }
            for a in 0..nb {
                let row = phi_dofs[a] as usize;
                for b in 0..nb {
                    let col = phi_dofs[b] as usize;
                    let p00 = b00
                        .position(row, col)
                        .expect("Jacobian pattern covers cell couplings");
                    b00.vals[p00] += loc00[a * nb + b];
                    for c in 0..9 {
                        let p01 = b01
                            .position(row, c * n + col)
                            .expect("Jacobian pattern covers cell couplings");
                        b01.vals[p01] += loc01[(c * nb + a) * nb + b];
                        let p10 = b10
                            .position(c * n + row, col)
                            .expect("Jacobian pattern covers cell couplings");
                        b10.vals[p10] += loc10[(c * nb + a) * nb + b];
                    }
                }
            }
        }
        Ok(())
    }

    fn riesz(&self) -> Result<RieszPreconditioner> {
        riesz_preconditioner(&self.phi_space, &self.sigma_space, self.radius)
    }

    fn qn_inner(
        &mut self,
        cfg: &NonlinearConfig,
        history: &mut Vec<DiagnosticsRecord>,
        t0: Instant,
    ) -> std::result::Result<SolveReport, DriverErr> {
        let mut jac = self.jacobian_skeleton()?;
        let riesz = self.riesz()?;
        let n = self.phi_space.n_scalar;
        let mut last_step = None;
        loop {
            let (ev, rec) = self.observe(last_step)?;
            history.push(rec);
            if ev.normalized <= cfg.tol {
                return Ok(SolveReport {
                    iterations: self.iteration,
                    final_residual: ev.normalized,
                    history: history.clone(),
                    loop_seconds: t0.elapsed().as_secs_f64(),
                });
            }
            if !ev.normalized.is_finite() {
                return Err(DriverErr::Known(
                    FailureKind::Diverged,
                    format!("non-finite residual at iteration {}", self.iteration),
                ));
            }
            if self.iteration >= cfg.max_iters {
                return Err(DriverErr::Known(
                    FailureKind::MaxIters,
                    format!(
                        "residual {:e} after the {} allowed iterations",
                        ev.normalized, cfg.max_iters
                    ),
                ));
            }
            let r_sig = self.sigma_residual(&self.phi, &self.sigma)?;
            let base = (norm_sq(&ev.r_v) + norm_sq(&r_sig)).sqrt();
            self.fill_jacobian(&self.monitor_nodes, &mut jac)?;
            let mut rhs = Vec::with_capacity(10 * n);
            rhs.extend(ev.r_v.iter().map(|v| -v));
            rhs.extend(r_sig.iter().map(|v| -v));
            let (direction, _) =
                gmres_solve(&jac, &rhs, &cfg.linear, Some(&riesz), Some(&self.projector))?;
            let (lambda, best) = golden_section_search(
                |l| {
                    let mut phi = self.phi.clone();
                    let mut sigma = self.sigma.clone();
                    for (p, d) in phi.iter_mut().zip(&direction[..n]) {
                        *p += l * d;
                    }
                    for (s, d) in sigma.iter_mut().zip(&direction[n..]) {
                        *s += l * d;
                    }
                    self.residual_norm_at(&phi, &sigma)
                },
                LAMBDA_MIN,
                cfg.line_search_iters,
            )?;
            if !(best < base) {
                return Err(DriverErr::Known(
                    FailureKind::StepFailure,
                    format!(
                        "no step length in [{LAMBDA_MIN}, 1] reduced the residual ({best:e} vs {base:e}) at iteration {}",
                        self.iteration
                    ),
                ));
            }
            for (p, d) in self.phi.iter_mut().zip(&direction[..n]) {
                *p += lambda * d;
            }
            self.projector.project(&mut self.phi);
            for (s, d) in self.sigma.iter_mut().zip(&direction[n..]) {
                *s += lambda * d;
            }
            last_step = Some(lambda);
            self.iteration += 1;
        }
    }
}
