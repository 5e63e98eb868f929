//! Mesh generation on the doubly periodic unit square. The physical mesh is
//! the image of the computational mesh under x = xi + grad(phi), with phi
//! and an auxiliary tensor sigma (the weak Hessian of phi) advanced either
//! by pseudo-time relaxation or by a quasi-Newton iteration on the coupled
//! residual
//!
//!   (v,   m det(I + sigma) - theta)        = 0
//!   (tau, sigma) + (div tau, grad phi)     = 0
//!
//! where m is the monitor interpolated at mesh vertices and theta the mean
//! of m det(I + sigma). sigma components are stored in row-major blocks
//! [00, 01, 10, 11] after the scalar potential.

use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::fem::{
    assemble_gradient_moment, assemble_mass, assemble_suite, lumped_mass, riesz_preconditioner,
    scalar_pattern, CellGeometry, ElementTab, FunctionSpace, GeometryMode, OperatorSuite,
    QuadratureRule, ValueShape,
};
use crate::mesh::{MeshData, MeshKind};
use crate::monitor::MonitorSpec;
use crate::sparse::{
    gmres_solve, pcg_solve, BlockOperator, CsrMatrix, KrylovConfig, RieszPreconditioner,
    SparseCholesky, WeightedMeanProjector,
};

use super::{
    golden_section_search, norm, norm_sq, DiagnosticsRecord, DriverErr, EvalOut, FailureKind,
    Method, NonlinearConfig, SolveFailure, SolveReport, DIVERGENCE_FACTOR, LAMBDA_MIN,
};

pub struct PlaneSolver {
    mesh: Arc<MeshData>,
    phi_space: Arc<FunctionSpace>,
    vertex_space: Arc<FunctionSpace>,
    sigma_space: Arc<FunctionSpace>,
    monitor: MonitorSpec,
    suite: OperatorSuite,
    /// M applied to the all-ones vector; the theta load vector is theta
    /// times this.
    mass_ones: Vec<f64>,
    mass_chol: SparseCholesky,
    vertex_mass_chol: SparseCholesky,
    /// Gradient first-moment matrices: row space is the vertex (degree-1)
    /// space, columns the potential space.
    moment: Vec<CsrMatrix>,
    projector: WeightedMeanProjector,
    /// Euclidean mean remover for the singular Poisson solves; the CG
    /// projector must be orthogonal, the weighted one is only a gauge.
    mean_projector: WeightedMeanProjector,
    phi: Vec<f64>,
    sigma: Vec<f64>,
    theta: f64,
    physical_coords: Vec<[f64; 3]>,
    monitor_nodes: Vec<f64>,
    iteration: usize,
}

impl PlaneSolver {
    pub fn new(mesh: Arc<MeshData>, monitor: MonitorSpec) -> Result<PlaneSolver> {
        if mesh.kind != MeshKind::PeriodicPlane {
            return Err(Error::InvalidParameter(
                "plane solver needs a periodic plane mesh".into(),
            ));
        }
        if monitor.is_sphere_monitor() {
            return Err(Error::InvalidParameter(
                "plane solver got a sphere-only monitor".into(),
            ));
        }
        let phi_space = FunctionSpace::new(mesh.clone(), 2, ValueShape::Scalar)?;
        let vertex_space = FunctionSpace::new(mesh.clone(), 1, ValueShape::Scalar)?;
        let sigma_space = FunctionSpace::new(mesh.clone(), 2, ValueShape::Tensor(2))?;
        let suite = assemble_suite(&phi_space)?;
        let n = phi_space.n_scalar;
        let mut mass_ones = vec![0.0; n];
        suite.mass.matvec(&vec![1.0; n], &mut mass_ones);
        let positions = phi_space.node_positions();
        let mass_chol = SparseCholesky::factor(&suite.mass, Some(&positions))?;
        let vertex_mass = assemble_mass(&vertex_space)?;
        let vertex_mass_chol =
            SparseCholesky::factor(&vertex_mass, Some(&vertex_space.node_positions()))?;
        let moment = assemble_gradient_moment(&vertex_space, &phi_space)?;
        let projector = WeightedMeanProjector::new(0, lumped_mass(&phi_space)?)?;
        let mean_projector = WeightedMeanProjector::new(0, vec![1.0; n])?;
        let mut solver = PlaneSolver {
            mesh,
            phi_space,
            vertex_space,
            sigma_space,
            monitor,
            suite,
            mass_ones,
            mass_chol,
            vertex_mass_chol,
            moment,
            projector,
            mean_projector,
            phi: vec![0.0; n],
            sigma: vec![0.0; 4 * n],
            theta: 1.0,
            physical_coords: Vec::new(),
            monitor_nodes: Vec::new(),
            iteration: 0,
        };
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

    /// Physical positions of the mesh vertices, unwrapped (displacements are
    /// added to computational vertices without reduction mod 1).
    pub fn physical_coords(&self) -> &[[f64; 3]] {
        &self.physical_coords
    }

    pub fn monitor(&self) -> &MonitorSpec {
        &self.monitor
    }

    /// Replace the state; coordinates, monitor values, and theta are
    /// recomputed for consistency. No gauge fixing is applied here so
    /// gauge-shifted states can be compared.
    pub fn set_state(&mut self, phi: Vec<f64>, sigma: Vec<f64>) -> Result<()> {
        let n = self.phi_space.n_scalar;
        if phi.len() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: phi.len(),
                context: "potential coefficients",
            });
        }
        if sigma.len() != 4 * n {
            return Err(Error::ShapeMismatch {
                expected: 4 * n,
                got: sigma.len(),
                context: "Hessian coefficients",
            });
        }
        self.phi = phi;
        self.sigma = sigma;
        self.iteration = 0;
        self.refresh()
    }

    /// Set phi and derive sigma from the weak Hessian relation.
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

    /// Recovered physical vertex positions for the given potential: the
    /// pointwise gradient L2-projected into the continuous degree-1 vector
    /// space, added to the computational vertices.
    fn coords_for(&self, phi: &[f64]) -> Result<Vec<[f64; 3]>> {
        let nv = self.vertex_space.n_scalar;
        let mut rhs = vec![0.0; nv];
        let mut disp = [Vec::new(), Vec::new()];
        for d in 0..2 {
            self.moment[d].matvec(phi, &mut rhs);
            disp[d] = self.vertex_mass_chol.solve_vec(&rhs);
        }
        let mut coords = Vec::with_capacity(nv);
        for v in 0..nv {
            let p = self.mesh.node_coord(v);
            coords.push([p[0] + disp[0][v], p[1] + disp[1][v], 0.0]);
        }
        Ok(coords)
    }

    fn monitor_values(&self, coords: &[[f64; 3]]) -> Result<Vec<f64>> {
        coords
            .iter()
            .map(|c| self.monitor.eval_plane([c[0], c[1]]))
            .collect()
    }

    /// One sweep assembling the V-block residual together with theta, the
    /// per-cell equidistribution measures, and the minimum area ratio.
    fn eval_v(&self, sigma: &[f64], m_nodes: &[f64]) -> Result<EvalOut> {
        let n = self.phi_space.n_scalar;
        let rule = QuadratureRule::for_shape(self.mesh.shape());
        let coord_tab = ElementTab::for_coordinates(&self.mesh, &rule);
        let phi_tab = ElementTab::new(self.phi_space.element, &rule);
        let m_tab = ElementTab::new(self.vertex_space.element, &rule);
        let mut geo = CellGeometry::new(&self.mesh, &rule);
        let mut u = vec![0.0; n];
        let mut cell_ratios = Vec::with_capacity(self.mesh.n_cells);
        let mut total_mass = 0.0;
        let mut total_area = 0.0;
        let mut min_det = f64::INFINITY;
        for cell in 0..self.mesh.n_cells {
            geo.fill(&self.mesh, cell, &coord_tab, &rule, GeometryMode::Strict)?;
            let phi_dofs = self.phi_space.cell_dofs(cell);
            let m_dofs = self.vertex_space.cell_dofs(cell);
            let mut cell_mass = 0.0;
            let mut cell_area = 0.0;
            for q in 0..geo.n_q {
                let w = geo.weights[q];
                let mut s = [0.0f64; 4];
                for (a, &dof) in phi_dofs.iter().enumerate() {
                    let v = phi_tab.value(q, a);
                    let dof = dof as usize;
                    for (c, sc) in s.iter_mut().enumerate() {
                        *sc += v * sigma[c * n + dof];
                    }
                }
                let det = (1.0 + s[0]) * (1.0 + s[3]) - s[1] * s[2];
                let mut m = 0.0;
                for (a, &dof) in m_dofs.iter().enumerate() {
                    m += m_tab.value(q, a) * m_nodes[dof as usize];
                }
                let integrand = m * det;
                if !integrand.is_finite() {
                    return Err(Error::NumericFailure { cell });
                }
                min_det = min_det.min(det);
                cell_mass += w * integrand;
                cell_area += w;
                for (a, &dof) in phi_dofs.iter().enumerate() {
                    u[dof as usize] += w * integrand * phi_tab.value(q, a);
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

    /// Residual of the Hessian relation: M sigma_ij + G^{(j,i)} phi per
    /// component block.
    fn sigma_residual(&self, phi: &[f64], sigma: &[f64]) -> Vec<f64> {
        let n = self.phi_space.n_scalar;
        let mut out = vec![0.0; 4 * n];
        for c in 0..4 {
            let (i, j) = (c / 2, c % 2);
            let block = &mut out[c * n..(c + 1) * n];
            self.suite.mass.matvec(&sigma[c * n..(c + 1) * n], block);
            self.suite.grad_pair(j, i).matvec_add(phi, 1.0, block);
        }
        out
    }

    fn sigma_from_phi(&self, phi: &[f64]) -> Result<Vec<f64>> {
        let n = self.phi_space.n_scalar;
        let mut sigma = vec![0.0; 4 * n];
        let mut rhs = vec![0.0; n];
        for c in 0..4 {
            let (i, j) = (c / 2, c % 2);
            self.suite.grad_pair(j, i).matvec(phi, &mut rhs);
            let x = self.mass_chol.solve_vec(&rhs);
            for (dst, v) in sigma[c * n..(c + 1) * n].iter_mut().zip(&x) {
                *dst = -v;
            }
        }
        Ok(sigma)
    }

    /// Refresh coordinates, monitor values, and theta from the current
    /// state and produce a diagnostics row.
    fn observe(&mut self, step_length: Option<f64>) -> Result<(EvalOut, DiagnosticsRecord)> {
        let coords = self.coords_for(&self.phi)?;
        let m_nodes = self.monitor_values(&coords)?;
        let ev = self.eval_v(&self.sigma, &m_nodes)?;
        self.physical_coords = coords;
        self.monitor_nodes = m_nodes;
        self.theta = ev.theta;
        let rec = DiagnosticsRecord {
            iteration: self.iteration,
            residual: ev.normalized,
            equidistribution_cv: ev.cv,
            rms_deviation: None,
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
        let ev = self.eval_v(sigma, &m_nodes)?;
        let r_sig = self.sigma_residual(phi, sigma);
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

    /// Shifted stiffness factorization used to precondition the singular
    /// Poisson solve.
    fn poisson_preconditioner(&self) -> Result<SparseCholesky> {
        let shifted = self.suite.stiffness.add_scaled(&self.suite.mass, 1.0)?;
        SparseCholesky::factor(&shifted, Some(&self.phi_space.node_positions()))
    }

    /// One relaxation step: recover coordinates, update the monitor and
    /// theta, then advance phi by the pseudo-time Poisson update and sigma
    /// by the mass solve. Returns diagnostics evaluated before the update.
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

    /// Pattern for one weighted-mass block of the Jacobian.
    fn jacobian_skeleton(&self) -> Result<BlockOperator> {
        let pattern = scalar_pattern(&self.phi_space);
        let top = CsrMatrix::hstack(&[&pattern; 4])?;
        // Component c = 2 i + j pairs with the derivative matrix G^{(j,i)}.
        let bottom_left = CsrMatrix::vstack(&[
            self.suite.grad_pair(0, 0),
            self.suite.grad_pair(1, 0),
            self.suite.grad_pair(0, 1),
            self.suite.grad_pair(1, 1),
        ])?;
        let bottom_right = CsrMatrix::block_diag(&[&self.suite.mass; 4]);
        let mut jac = BlockOperator::new([
            [None, Some(top)],
            [Some(bottom_left), Some(bottom_right)],
        ])?;
        jac.constant_phi_nullspace = true;
        Ok(jac)
    }

    /// Refill the (v, dsigma) block: weighted mass matrices with the
    /// cofactor weights of I + sigma, scaled by the monitor.
    fn fill_v_sigma_block(&self, m_nodes: &[f64], top: &mut CsrMatrix) -> Result<()> {
        top.set_zero();
        let n = self.phi_space.n_scalar;
        let rule = QuadratureRule::for_shape(self.mesh.shape());
        let coord_tab = ElementTab::for_coordinates(&self.mesh, &rule);
        let phi_tab = ElementTab::new(self.phi_space.element, &rule);
        let m_tab = ElementTab::new(self.vertex_space.element, &rule);
        let mut geo = CellGeometry::new(&self.mesh, &rule);
        let nb = phi_tab.n_basis;
        let mut local = vec![0.0f64; 4 * nb * nb];
        for cell in 0..self.mesh.n_cells {
            geo.fill(&self.mesh, cell, &coord_tab, &rule, GeometryMode::Strict)?;
            let phi_dofs = self.phi_space.cell_dofs(cell);
            let m_dofs = self.vertex_space.cell_dofs(cell);
            local.fill(0.0);
            for q in 0..geo.n_q {
                let w = geo.weights[q];
                let mut s = [0.0f64; 4];
                for (a, &dof) in phi_dofs.iter().enumerate() {
                    let v = phi_tab.value(q, a);
                    let dof = dof as usize;
                    for (c, sc) in s.iter_mut().enumerate() {
                        *sc += v * self.sigma[c * n + dof];
                    }
                }
                let mut m = 0.0;
                for (a, &dof) in m_dofs.iter().enumerate() {
                    m += m_tab.value(q, a) * m_nodes[dof as usize];
                }
                // Cofactor weights of A = I + sigma: the derivative of
                // det A in the direction dsigma_ij is cof(A)_ij dsigma_ij.
                let coef = [
                    m * (1.0 + s[3]),
                    -m * s[2],
                    -m * s[1],
                    m * (1.0 + s[0]),
                ];
                for a in 0..nb {
                    let va = w * phi_tab.value(q, a);
                    for b in 0..nb {
                        let vab = va * phi_tab.value(q, b);
                        for (c, cf) in coef.iter().enumerate() {
                            local[(c * nb + a) * nb + b] += vab * cf;
                        }
                    }
                }
            }
            for (c, chunk) in local.chunks_exact(nb * nb).enumerate() {
                for a in 0..nb {
                    let row = phi_dofs[a] as usize;
                    for b in 0..nb {
                        let col = c * n + phi_dofs[b] as usize;
                        let p = top
                            .position(row, col)
                            .expect("Jacobian pattern covers cell couplings");
                        top.vals[p] += chunk[a * nb + b];
                    }
                }
            }
        }
        Ok(())
    }

    fn riesz(&self) -> Result<RieszPreconditioner> {
        riesz_preconditioner(&self.phi_space, &self.sigma_space, 1.0)
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
            let r_sig = self.sigma_residual(&self.phi, &self.sigma);
            let base = (norm_sq(&ev.r_v) + norm_sq(&r_sig)).sqrt();
            {
                let top = jac.block_mut(0, 1).expect("skeleton holds the weighted block");
                self.fill_v_sigma_block(&self.monitor_nodes, top)?;
            }
            let mut rhs = Vec::with_capacity(5 * n);
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
