//! Nonlinear drivers for mesh generation: the pseudo-time relaxation scheme
//! and the quasi-Newton scheme, shared between the plane and sphere
//! problems. This module holds the pieces common to both: run configuration,
//! per-iteration diagnostics, failure classification, the step-length
//! search, and a least-squares fit used by convergence-rate checks.

pub mod plane;
pub mod sphere;

pub use plane::PlaneSolver;
pub use sphere::{exp_map, exp_map_derivative, SphereSolver};

use crate::error::Error;
use crate::sparse::KrylovConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Relaxation,
    QuasiNewton,
}

/// Settings for one nonlinear solve. `dt` is only read by the relaxation
/// method; `line_search_iters` and `linear` only by the quasi-Newton method.
#[derive(Debug, Clone)]
pub struct NonlinearConfig {
    pub method: Method,
    pub dt: f64,
    /// Termination threshold on the normalized residual.
    pub tol: f64,
    pub max_iters: usize,
    /// Residual evaluations spent per line search.
    pub line_search_iters: usize,
    pub linear: KrylovConfig,
}

impl NonlinearConfig {
    pub fn relaxation(dt: f64) -> crate::error::Result<NonlinearConfig> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "relaxation step size must be positive, got {dt}"
            )));
        }
        Ok(NonlinearConfig {
            method: Method::Relaxation,
            dt,
            tol: 1e-8,
            max_iters: 20_000,
            line_search_iters: 5,
            linear: KrylovConfig::gmres(1e-5, 3000, 30)?,
        })
    }

    pub fn quasi_newton() -> crate::error::Result<NonlinearConfig> {
        Ok(NonlinearConfig {
            method: Method::QuasiNewton,
            dt: 0.0,
            tol: 1e-8,
            max_iters: 200,
            line_search_iters: 5,
            linear: KrylovConfig::gmres(1e-5, 3000, 30)?,
        })
    }

    pub fn validate(&self) -> crate::error::Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "nonlinear tolerance must lie in (0,1), got {}",
                self.tol
            )));
        }
        if self.method == Method::Relaxation && !(self.dt > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "relaxation step size must be positive, got {}",
                self.dt
            )));
        }
        if self.method == Method::QuasiNewton && self.line_search_iters < 2 {
            return Err(Error::InvalidParameter(
                "line search needs at least 2 evaluations".into(),
            ));
        }
        Ok(())
    }
}

/// One row of the convergence log. Optional fields stay `None` where a
/// quantity does not apply (step length outside quasi-Newton, deviation
/// without an exact reference map).
#[derive(Debug, Clone)]
pub struct DiagnosticsRecord {
    pub iteration: usize,
    /// V-block residual norm over the norm of the theta load vector.
    pub residual: f64,
    /// Standard deviation over mean of the per-cell monitor masses.
    pub equidistribution_cv: f64,
    pub rms_deviation: Option<f64>,
    pub theta: f64,
    pub step_length: Option<f64>,
    /// Minimum area ratio over all quadrature points; nonpositive values
    /// mean the mesh is tangled.
    pub min_area_ratio: f64,
}

/// Outcome of a convergent solve. `loop_seconds` times the nonlinear
/// iteration only, excluding operator setup and factorizations.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_residual: f64,
    pub history: Vec<DiagnosticsRecord>,
    pub loop_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    /// Residual blew up past the divergence guard or went non-finite.
    Diverged,
    /// The linearized problem lost definiteness: nonpositive theta, Krylov
    /// stagnation or breakdown. The discrete problem has left the convex
    /// regime.
    ConvexityLoss,
    /// No step length in the search interval reduced the residual.
    StepFailure,
    MaxIters,
    /// Anything else (shape errors, I/O); indicates a bug or bad setup.
    Internal,
}

/// Terminal failure of a nonlinear solve, carrying whatever history was
/// accumulated so callers can still log it.
#[derive(Debug)]
pub struct SolveFailure {
    pub kind: FailureKind,
    pub message: String,
    pub history: Vec<DiagnosticsRecord>,
    pub loop_seconds: f64,
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.kind, self.message)
    }
}

impl std::error::Error for SolveFailure {}

impl SolveFailure {
    pub(crate) fn classify(err: Error) -> (FailureKind, String) {
        let kind = match &err {
            Error::NonpositiveTheta { .. }
            | Error::KrylovStagnation { .. }
            | Error::KrylovMaxIters { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::LinearSolve(_) => FailureKind::ConvexityLoss,
            Error::NumericFailure { .. } => FailureKind::Diverged,
            _ => FailureKind::Internal,
        };
        (kind, err.to_string())
    }
}

/// Driver-internal error carrying either a classified outcome or a core
/// error still to be classified; lets driver bodies use `?` on both.
pub(crate) enum DriverErr {
    Known(FailureKind, String),
    Core(Error),
}

impl From<Error> for DriverErr {
    fn from(e: Error) -> DriverErr {
        DriverErr::Core(e)
    }
}

/// Lower end of the line-search interval.
pub(crate) const LAMBDA_MIN: f64 = 1e-3;
/// Relaxation declares divergence past this growth of the initial residual.
pub(crate) const DIVERGENCE_FACTOR: f64 = 1e3;
/// Residual growth past which a failed evaluation counts as a blowup.
pub(crate) const BLOWUP_ESCALATION: f64 = 10.0;

/// True when a residual evaluation failed because the state blew up: the
/// normalization constant collapsed or values went non-finite while the
/// residual had already grown well past its initial level. Distinguishes
/// divergence of the time stepping from a loss of convexity near a
/// stationary state.
pub(crate) fn blowup_while_growing(err: &Error, initial: f64, last: f64) -> bool {
    matches!(
        err,
        Error::NonpositiveTheta { .. } | Error::NumericFailure { .. }
    ) && initial.is_finite()
        && last.is_finite()
        && last > BLOWUP_ESCALATION * initial
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>()
}

/// Byproducts of one residual evaluation, shared by both drivers.
pub(crate) struct EvalOut {
    pub r_v: Vec<f64>,
    pub theta: f64,
    pub normalized: f64,
    pub cv: f64,
    pub min_det: f64,
}

/// Golden-section search for the minimizer of `f` over
/// `[lambda_min, 1]`, spending exactly `budget` evaluations (at least 2).
/// Returns the best sampled pair `(lambda, f(lambda))`.
pub fn golden_section_search<F>(
    mut f: F,
    lambda_min: f64,
    budget: usize,
) -> crate::error::Result<(f64, f64)>
where
    F: FnMut(f64) -> crate::error::Result<f64>,
{
    debug_assert!(budget >= 2);
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut a = lambda_min;
    let mut b = 1.0;
    let mut x1 = b - inv_phi * (b - a);
    let mut x2 = a + inv_phi * (b - a);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    for _ in 2..budget {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - inv_phi * (b - a);
            f1 = f(x1)?;
            if f1 < best.1 {
                best = (x1, f1);
            }
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + inv_phi * (b - a);
            f2 = f(x2)?;
            if f2 < best.1 {
                best = (x2, f2);
            }
        }
    }
    Ok(best)
}

/// Least-squares line through `(xs, ys)`; returns (slope, intercept,
/// r_squared). Degenerate spreads return r_squared = 1 for a constant fit.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    debug_assert_eq!(xs.len(), ys.len());
    debug_assert!(xs.len() >= 2);
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return (0.0, my, 1.0);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, v) = golden_section_search(|l| Ok((l - 0.6) * (l - 0.6)), 1e-3, 20).unwrap();
        assert!((x - 0.6).abs() <= 1e-3, "x {x}");
        assert!(v <= 1e-6);
    }

    #[test]
    fn golden_section_monotone_objective_pushes_right() {
        // Decreasing objective: the best sample must approach the right
        // endpoint from inside the interval.
        let (x, _) = golden_section_search(|l| Ok(1.0 - l), 1e-3, 5).unwrap();
        assert!(x > 0.8, "x {x}");
        assert!(x < 1.0);
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (s, i, r2) = linear_fit(&xs, &ys);
        assert!((s - 2.0).abs() <= 1e-12);
        assert!((i - 1.0).abs() <= 1e-12);
        assert!((r2 - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn linear_fit_r2_drops_for_noise() {
        let xs = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [0.0, 5.0, -1.0, 4.0, 1.0, 3.0];
        let (_, _, r2) = linear_fit(&xs, &ys);
        assert!(r2 < 0.9, "r2 {r2}");
    }
}
