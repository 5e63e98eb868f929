//! Conjugate gradients and restarted GMRES.
//!
//! CG carries a minimal-residual smoothing step so the reported residual
//! norms are nonincreasing, which downstream diagnostics rely on. GMRES is
//! right-preconditioned: the recurrence then tracks the true residual of the
//! unpreconditioned system, and preconditioners only need to be linear maps.

use super::ops::{LinearOp, WeightedMeanProjector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KrylovMethod {
    ConjugateGradient,
    Gmres,
}

#[derive(Debug, Clone)]
pub struct KrylovConfig {
    pub method: KrylovMethod,
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Restart length; only GMRES reads it.
    pub restart: usize,
}

impl KrylovConfig {
    pub fn new(
        method: KrylovMethod,
        rel_tol: f64,
        max_iters: usize,
        restart: usize,
    ) -> Result<KrylovConfig> {
        if !(rel_tol > 0.0 && rel_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "Krylov tolerance must lie in (0,1), got {rel_tol}"
            )));
        }
        if max_iters == 0 {
            return Err(Error::InvalidParameter(
                "Krylov max_iters must be at least 1".into(),
            ));
        }
        if restart == 0 {
            return Err(Error::InvalidParameter(
                "GMRES restart length must be at least 1".into(),
            ));
        }
        Ok(KrylovConfig {
            method,
            rel_tol,
            max_iters,
            restart,
        })
    }

    pub fn cg(rel_tol: f64, max_iters: usize) -> Result<KrylovConfig> {
        KrylovConfig::new(KrylovMethod::ConjugateGradient, rel_tol, max_iters, 30)
    }

    pub fn gmres(rel_tol: f64, max_iters: usize, restart: usize) -> Result<KrylovConfig> {
        KrylovConfig::new(KrylovMethod::Gmres, rel_tol, max_iters, restart)
    }
}

#[derive(Debug, Clone)]
pub struct KrylovStats {
    pub iterations: usize,
    /// Relative residual at exit.
    pub residual: f64,
    /// One entry per iteration, starting with the initial residual norm
    /// (absolute, not relative).
    pub residual_history: Vec<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_square(a: &dyn LinearOp, b: &[f64]) -> Result<usize> {
    let n = a.n_rows();
    if a.n_cols() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: a.n_cols(),
            context: "Krylov solve needs a square operator",
        });
    }
    if b.len() != n {
        return Err(Error::ShapeMismatch {
            expected: n,
            got: b.len(),
            context: "Krylov right-hand side length",
        });
    }
    Ok(n)
}

/// Unpreconditioned CG from a zero initial guess. The matrix must be
/// symmetric positive (semi)definite; symmetry is the caller's problem. For
/// a semidefinite matrix with a constant nullspace, pass the projector and
/// a compatible right-hand side; the returned solution has zero weighted
/// mean over the projector's range.
///
/// The smoothed iterate sequence is returned, so `residual_history` is
/// monotone nonincreasing.
pub fn cg_solve(
    a: &dyn LinearOp,
    b: &[f64],
    config: &KrylovConfig,
    nullspace: Option<&WeightedMeanProjector>,
) -> Result<(Vec<f64>, KrylovStats)> {
    pcg_solve(a, b, config, None, nullspace)
}

/// CG with an optional symmetric positive definite preconditioner. The
/// reported residual is the smoothed true residual of the unpreconditioned
/// system, so the history stays monotone nonincreasing regardless of the
/// preconditioner.
pub fn pcg_solve(
    a: &dyn LinearOp,
    b: &[f64],
    config: &KrylovConfig,
    precond: Option<&dyn LinearOp>,
    nullspace: Option<&WeightedMeanProjector>,
) -> Result<(Vec<f64>, KrylovStats)> {
    let n = check_square(a, b)?;
    let mut rhs = b.to_vec();
    if let Some(p) = nullspace {
        p.project(&mut rhs);
    }
    let bnorm = norm(&rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            KrylovStats {
                iterations: 0,
                residual: 0.0,
                residual_history: vec![0.0],
            },
        ));
    }

    let mut r = rhs;
    let mut z = vec![0.0; n];
    let apply_precond = |r: &[f64], z: &mut Vec<f64>| match precond {
        Some(m) => {
            m.apply(r, z);
            if let Some(proj) = nullspace {
                proj.project(z);
            }
        }
        None => z.copy_from_slice(r),
    };
    apply_precond(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    // Smoothed iterate and residual; these are what we report and return.
    let mut xs = x.clone();
    let mut rs = r.clone();
    let mut history = vec![norm(&rs)];
    let mut rz = dot(&r, &z);

    for k in 1..=config.max_iters {
        a.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(Error::LinearSolve(format!(
                "CG curvature p'Ap = {pap:e} at iteration {k}; matrix is not positive definite"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if let Some(proj) = nullspace {
            proj.project(&mut r);
        }
        // Minimal-residual smoothing: move the smoothed pair toward the new
        // iterate by the step that minimizes the smoothed residual norm.
        let mut dd = 0.0;
        let mut rd = 0.0;
        for i in 0..n {
            let d = r[i] - rs[i];
            dd += d * d;
            rd += rs[i] * d;
        }
        let eta = if dd > 0.0 { -rd / dd } else { 0.0 };
        for i in 0..n {
            rs[i] += eta * (r[i] - rs[i]);
            xs[i] += eta * (x[i] - xs[i]);
        }
        let rsnorm = norm(&rs);
        history.push(rsnorm);
        if rsnorm <= config.rel_tol * bnorm {
            if let Some(proj) = nullspace {
                proj.project(&mut xs);
            }
            return Ok((
                xs,
                KrylovStats {
                    iterations: k,
                    residual: rsnorm / bnorm,
                    residual_history: history,
                },
            ));
        }
        apply_precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::KrylovMaxIters {
        iterations: config.max_iters,
        residual: history.last().copied().unwrap_or(f64::NAN) / bnorm,
    })
}

/// Restarted GMRES with optional right preconditioning and constant-mode
/// projection. The projector is applied to the right-hand side, to every
/// operator output, and to the returned solution, so all Krylov vectors stay
/// in the complement of the constant mode.
///
/// Errors: `KrylovStagnation` when a full restart cycle produces no decrease
/// in the true residual (the caller interprets this as loss of convexity),
/// `KrylovMaxIters` when the iteration cap is reached.
pub fn gmres_solve(
    a: &dyn LinearOp,
    b: &[f64],
    config: &KrylovConfig,
    preconditioner: Option<&dyn LinearOp>,
    nullspace: Option<&WeightedMeanProjector>,
) -> Result<(Vec<f64>, KrylovStats)> {
    let n = check_square(a, b)?;
    if let Some(m) = preconditioner {
        if m.n_rows() != n || m.n_cols() != n {
            return Err(Error::ShapeMismatch {
                expected: n,
                got: m.n_rows(),
                context: "GMRES preconditioner shape",
            });
        }
    }
    let mut rhs = b.to_vec();
    if let Some(p) = nullspace {
        p.project(&mut rhs);
    }
    let bnorm = norm(&rhs);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            KrylovStats {
                iterations: 0,
                residual: 0.0,
                residual_history: vec![0.0],
            },
        ));
    }

    let m = config.restart;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
    let mut hess = vec![0.0f64; (m + 1) * m]; // column-major, column j holds h[0..=j+1]
    let mut givens_c = vec![0.0f64; m];
    let mut givens_s = vec![0.0f64; m];
    let mut g = vec![0.0f64; m + 1];
    let mut scratch = vec![0.0f64; n];
    let mut z = vec![0.0f64; n];

    let mut history = Vec::new();
    let mut iterations = 0usize;
    let mut cycle = 0usize;

    loop {
        cycle += 1;
        // True residual at the start of the cycle.
        a.apply(&x, &mut scratch);
        let mut r: Vec<f64> = rhs.iter().zip(&scratch).map(|(b, ax)| b - ax).collect();
        if let Some(p) = nullspace {
            p.project(&mut r);
        }
        let beta = norm(&r);
        if cycle == 1 {
            history.push(beta);
        }
        if beta <= config.rel_tol * bnorm {
            if let Some(p) = nullspace {
                p.project(&mut x);
            }
            return Ok((
                x,
                KrylovStats {
                    iterations,
                    residual: beta / bnorm,
                    residual_history: history,
                },
            ));
        }
        if iterations >= config.max_iters {
            return Err(Error::KrylovMaxIters {
                iterations,
                residual: beta / bnorm,
            });
        }

        basis.clear();
        for v in &mut r {
            *v /= beta;
        }
        basis.push(r);
        g.fill(0.0);
        g[0] = beta;

        let mut cols = 0usize;
        let mut breakdown = false;
        while cols < m && iterations < config.max_iters {
            let j = cols;
            let vj = &basis[j];
            let input: &[f64] = match preconditioner {
                Some(prec) => {
                    prec.apply(vj, &mut z);
                    &z
                }
                None => vj,
            };
            let mut w = vec![0.0f64; n];
            a.apply(input, &mut w);
            if let Some(p) = nullspace {
                p.project(&mut w);
            }
            // Modified Gram-Schmidt.
            for (i, vi) in basis.iter().enumerate() {
                let h = dot(&w, vi);
                hess[j * (m + 1) + i] = h;
                for (wk, vk) in w.iter_mut().zip(vi) {
                    *wk -= h * vk;
                }
            }
            let hnext = norm(&w);
            hess[j * (m + 1) + j + 1] = hnext;
            // Apply accumulated rotations to the new column, then form the
            // rotation that annihilates the subdiagonal.
            for i in 0..j {
                let hi = hess[j * (m + 1) + i];
                let hi1 = hess[j * (m + 1) + i + 1];
                hess[j * (m + 1) + i] = givens_c[i] * hi + givens_s[i] * hi1;
                hess[j * (m + 1) + i + 1] = -givens_s[i] * hi + givens_c[i] * hi1;
            }
            let hjj = hess[j * (m + 1) + j];
            let denom = (hjj * hjj + hnext * hnext).sqrt();
            let (c, s) = if denom > 0.0 {
                (hjj / denom, hnext / denom)
            } else {
                (1.0, 0.0)
            };
            givens_c[j] = c;
            givens_s[j] = s;
            hess[j * (m + 1) + j] = c * hjj + s * hnext;
            g[j + 1] = -s * g[j];
            g[j] *= c;

            iterations += 1;
            cols += 1;
            let est = g[j + 1].abs();
            history.push(est);
            if est <= config.rel_tol * bnorm {
                break;
            }
            if hnext <= 1e-14 * bnorm {
                breakdown = true;
                break;
            }
            for v in &mut w {
                *v /= hnext;
            }
            basis.push(w);
        }

        // Back-substitute for the coefficients of the basis combination.
        let mut y = vec![0.0f64; cols];
        for i in (0..cols).rev() {
            let mut acc = g[i];
            for (k, yk) in y.iter().enumerate().take(cols).skip(i + 1) {
                acc -= hess[k * (m + 1) + i] * yk;
            }
            y[i] = acc / hess[i * (m + 1) + i];
        }
        scratch.fill(0.0);
        for (vk, yk) in basis.iter().zip(&y) {
            for i in 0..n {
                scratch[i] += yk * vk[i];
            }
        }
        match preconditioner {
            Some(prec) => {
                prec.apply(&scratch, &mut z);
                for i in 0..n {
                    x[i] += z[i];
                }
            }
            None => {
                for i in 0..n {
                    x[i] += scratch[i];
                }
            }
        }
        if let Some(p) = nullspace {
            p.project(&mut x);
        }

        // Stagnation: a completed cycle that failed to reduce the true
        // residual. Recompute it here rather than trusting the estimate.
        if cols == m && !breakdown {
            a.apply(&x, &mut scratch);
            let mut rr: Vec<f64> = rhs.iter().zip(&scratch).map(|(b, ax)| b - ax).collect();
            if let Some(p) = nullspace {
                p.project(&mut rr);
            }
            let end = norm(&rr);
            if end >= beta * (1.0 - 1e-12) && end > config.rel_tol * bnorm {
                return Err(Error::KrylovStagnation {
                    restart_cycle: cycle,
                    residual: end / bnorm,
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::csr::CsrMatrix;
    use crate::sparse::ops::FnOp;

    #[test]
    fn preconditioned_cg_beats_plain_cg_on_singular_laplacian() {
        // 1D periodic Laplacian: singular with a constant nullspace.
        let n = 120usize;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 2.0));
            trip.push((i, (i + 1) % n, -1.0));
            trip.push((i, (i + n - 1) % n, -1.0));
        }
        let a = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        // Mean-free point source: consistent, and rich enough in modes that
        // plain CG needs many sweeps to move information around the ring.
        let b: Vec<f64> = (0..n)
            .map(|i| if i == 0 { 1.0 - 1.0 / n as f64 } else { -1.0 / n as f64 })
            .collect();
        let proj = WeightedMeanProjector::new(0, vec![1.0; n]).unwrap();
        let cfg = KrylovConfig::cg(1e-10, 2000).unwrap();
        let (_, plain) = cg_solve(&a, &b, &cfg, Some(&proj)).unwrap();

        let shifted = {
            let mut t = trip.clone();
            for i in 0..n {
                t.push((i, i, 1.0));
            }
            CsrMatrix::from_triplets(n, n, &t).unwrap()
        };
        let chol = crate::sparse::SparseCholesky::factor(&shifted, None).unwrap();
        let (x, pre) = pcg_solve(&a, &b, &cfg, Some(&chol), Some(&proj)).unwrap();
        assert!(
            pre.iterations < plain.iterations,
            "preconditioned {} vs plain {}",
            pre.iterations,
            plain.iterations
        );
        let mut ax = vec![0.0; n];
        a.matvec(&x, &mut ax);
        let err: f64 = ax
            .iter()
            .zip(&b)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        assert!(err <= 1e-9, "residual {err:e}");
        // Monotone reported history survives preconditioning.
        for w in pre.residual_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn cg_identity_converges_in_one_iteration() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.0), (1, 1, 1.0), (2, 2, 1.0)]).unwrap();
        let b = vec![0.3, -2.0, 5.0];
        let cfg = KrylovConfig::cg(1e-12, 10).unwrap();
        let (x, stats) = cg_solve(&a, &b, &cfg, None).unwrap();
        assert_eq!(stats.iterations, 1);
        for i in 0..3 {
            assert!((x[i] - b[i]).abs() <= 1e-14);
        }
    }

    #[test]
    fn cg_two_by_two_reference_solution() {
        let a =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)])
                .unwrap();
        let b = vec![1.0, 2.0];
        let cfg = KrylovConfig::cg(1e-12, 10).unwrap();
        let (x, _) = cg_solve(&a, &b, &cfg, None).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() <= 1e-12);
        assert!((x[1] - 7.0 / 11.0).abs() <= 1e-12);
    }

    #[test]
    fn cg_residual_history_is_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let n = 60;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 4.0 + rng.gen_range(0.0..1.0)));
            if i + 1 < n {
                let v = rng.gen_range(-1.0..1.0);
                trip.push((i, i + 1, v));
                trip.push((i + 1, i, v));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let cfg = KrylovConfig::cg(1e-10, 200).unwrap();
        let (_, stats) = cg_solve(&a, &b, &cfg, None).unwrap();
        for w in stats.residual_history.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-12),
                "residual rose: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn cg_reports_max_iters_with_residual() {
        let a =
            CsrMatrix::from_triplets(2, 2, &[(0, 0, 4.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)])
                .unwrap();
        let cfg = KrylovConfig::cg(1e-15, 1).unwrap();
        match cg_solve(&a, &[1.0, 2.0], &cfg, None) {
            Err(Error::KrylovMaxIters { iterations: 1, residual }) => {
                assert!(residual.is_finite());
            }
            other => panic!("expected KrylovMaxIters, got {other:?}"),
        }
    }

    #[test]
    fn gmres_identity_converges_in_one_iteration() {
        let id = FnOp::new(4, 4, |x: &[f64], y: &mut [f64]| y.copy_from_slice(x));
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let cfg = KrylovConfig::gmres(1e-12, 50, 30).unwrap();
        let (x, stats) = gmres_solve(&id, &b, &cfg, None, None).unwrap();
        assert_eq!(stats.iterations, 1);
        for i in 0..4 {
            assert!((x[i] - b[i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn gmres_nonsymmetric_matches_direct_solve() {
        // A = [[2,1,0],[0,3,1],[1,0,4]], b = [1,2,3]; elimination by hand
        // gives x = [7/25, 11/25, 17/25].
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 2.0),
                (0, 1, 1.0),
                (1, 1, 3.0),
                (1, 2, 1.0),
                (2, 0, 1.0),
                (2, 2, 4.0),
            ],
        )
        .unwrap();
        let b = vec![1.0, 2.0, 3.0];
        let cfg = KrylovConfig::gmres(1e-13, 50, 30).unwrap();
        let (x, _) = gmres_solve(&a, &b, &cfg, None, None).unwrap();
        let expect = [7.0 / 25.0, 11.0 / 25.0, 17.0 / 25.0];
        for i in 0..3 {
            assert!((x[i] - expect[i]).abs() <= 1e-10, "x[{i}] = {}", x[i]);
        }
    }

    #[test]
    fn gmres_history_nonincreasing_within_cycle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 40;
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, 5.0));
            trip.push((i, (i + 1) % n, rng.gen_range(-1.0..1.0)));
            trip.push(((i + 3) % n, i, rng.gen_range(-1.0..1.0)));
        }
        let a = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        let b: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let cfg = KrylovConfig::gmres(1e-10, 200, 10).unwrap();
        let (_, stats) = gmres_solve(&a, &b, &cfg, None, None).unwrap();
        // Entries within one restart cycle come from the Givens estimates and
        // must not increase; compare only inside each cycle window.
        for chunk in stats.residual_history.chunks(10 + 1) {
            for w in chunk.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn gmres_detects_stagnation_on_rotation() {
        // A plane rotation by 90 degrees: one-dimensional Krylov spaces make
        // no progress from this right-hand side, so restart 1 must stagnate.
        let a = CsrMatrix::from_triplets(
            2,
            2,
            &[(0, 1, -1.0), (1, 0, 1.0)],
        )
        .unwrap();
        let cfg = KrylovConfig::gmres(1e-12, 100, 1).unwrap();
        match gmres_solve(&a, &[1.0, 0.0], &cfg, None, None) {
            Err(Error::KrylovStagnation { .. }) => {}
            other => panic!("expected stagnation, got {other:?}"),
        }
    }

    #[test]
    fn gmres_right_preconditioning_preserves_solution() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[
                (0, 0, 10.0),
                (0, 1, 1.0),
                (1, 0, 1.0),
                (1, 1, 8.0),
                (1, 2, 2.0),
                (2, 1, 2.0),
                (2, 2, 12.0),
            ],
        )
        .unwrap();
        let diag = FnOp::new(3, 3, |x: &[f64], y: &mut [f64]| {
            y[0] = x[0] / 10.0;
            y[1] = x[1] / 8.0;
            y[2] = x[2] / 12.0;
        });
        let b = vec![1.0, -2.0, 4.0];
        let cfg = KrylovConfig::gmres(1e-13, 60, 30).unwrap();
        let (xp, _) = gmres_solve(&a, &b, &cfg, Some(&diag), None).unwrap();
        let (x0, _) = gmres_solve(&a, &b, &cfg, None, None).unwrap();
        for i in 0..3 {
            assert!((xp[i] - x0[i]).abs() <= 1e-9);
        }
    }
}
