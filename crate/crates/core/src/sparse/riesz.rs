//! Block preconditioner for the mixed quasi-Newton system, built from the
//! Riesz maps of the two spaces: an H1-type operator (1/H^2) M + K on the
//! potential block and the component mass matrix on the auxiliary-Hessian
//! block. Applied as a sequential sweep, potential first. Both blocks are
//! symmetric positive definite, so each is inverted by a cached Cholesky
//! factorization; if factorization fails the block falls back to inner CG
//! with a tight tolerance so the map stays linear to working precision.

use super::cholesky::SparseCholesky;
use super::csr::CsrMatrix;
use super::krylov::{cg_solve, KrylovConfig};
use super::ops::{LinearOp, WeightedMeanProjector};
use crate::error::{Error, Result};

enum BlockSolve {
    Direct(SparseCholesky),
    InnerCg(CsrMatrix),
}

impl BlockSolve {
    fn build(a: &CsrMatrix, positions: Option<&[[f64; 3]]>) -> Result<BlockSolve> {
        match SparseCholesky::factor(a, positions) {
            Ok(f) => Ok(BlockSolve::Direct(f)),
            Err(Error::NotPositiveDefinite { .. }) => Ok(BlockSolve::InnerCg(a.clone())),
            Err(e) => Err(e),
        }
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        match self {
            BlockSolve::Direct(f) => f.solve(b, x),
            BlockSolve::InnerCg(a) => {
                let cfg = KrylovConfig::cg(1e-12, 1000).expect("static CG config");
                match cg_solve(a, b, &cfg, None) {
                    Ok((sol, _)) => x.copy_from_slice(&sol),
                    // A preconditioner must return something usable even when
                    // the inner iteration underdelivers; identity is safe.
                    Err(_) => x.copy_from_slice(b),
                }
            }
        }
    }
}

pub struct RieszPreconditioner {
    phi: BlockSolve,
    sigma: BlockSolve,
    n_phi: usize,
    n_sigma: usize,
    n_comps: usize,
    projector: Option<WeightedMeanProjector>,
}

impl RieszPreconditioner {
    /// `phi_block` is the already-assembled (1/H^2) M + K operator on the
    /// potential space; `sigma_mass` the scalar mass matrix shared by the
    /// `n_comps` tensor components. Node positions enable fill-reducing
    /// ordering. The optional projector removes the constant mode from the
    /// potential output so Krylov iterates stay in its complement.
    pub fn new(
        phi_block: &CsrMatrix,
        sigma_mass: &CsrMatrix,
        n_comps: usize,
        positions: Option<&[[f64; 3]]>,
        projector: Option<WeightedMeanProjector>,
    ) -> Result<RieszPreconditioner> {
        if n_comps == 0 {
            return Err(Error::InvalidParameter(
                "preconditioner needs at least one tensor component".into(),
            ));
        }
        if let Some(p) = &projector {
            if p.range().end > phi_block.n_rows {
                return Err(Error::ShapeMismatch {
                    expected: phi_block.n_rows,
                    got: p.range().end,
                    context: "projector range inside the potential block",
                });
            }
        }
        Ok(RieszPreconditioner {
            phi: BlockSolve::build(phi_block, positions)?,
            sigma: BlockSolve::build(sigma_mass, positions)?,
            n_phi: phi_block.n_rows,
            n_sigma: sigma_mass.n_rows,
            n_comps,
            projector,
        })
    }
}

impl LinearOp for RieszPreconditioner {
    fn n_rows(&self) -> usize {
        self.n_phi + self.n_comps * self.n_sigma
    }
    fn n_cols(&self) -> usize {
        self.n_rows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.phi.solve(&x[..self.n_phi], &mut y[..self.n_phi]);
        if let Some(p) = &self.projector {
            p.project(&mut y[..self.n_phi]);
        }
        for c in 0..self.n_comps {
            let lo = self.n_phi + c * self.n_sigma;
            let hi = lo + self.n_sigma;
            self.sigma.solve(&x[lo..hi], &mut y[lo..hi]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd_tridiag(n: usize, d: f64) -> CsrMatrix {
        let mut trip = Vec::new();
        for i in 0..n {
            trip.push((i, i, d));
            if i + 1 < n {
                trip.push((i, i + 1, -1.0));
                trip.push((i + 1, i, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &trip).unwrap()
    }

    #[test]
    fn zero_maps_to_zero() {
        let p =
            RieszPreconditioner::new(&spd_tridiag(8, 4.0), &spd_tridiag(8, 3.0), 4, None, None)
                .unwrap();
        let x = vec![0.0; p.n_rows()];
        let mut y = vec![1.0; p.n_rows()];
        p.apply(&x, &mut y);
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn application_is_linear() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let weights = vec![1.0; 8];
        let proj = WeightedMeanProjector::new(0, weights).unwrap();
        let p = RieszPreconditioner::new(
            &spd_tridiag(8, 4.0),
            &spd_tridiag(6, 3.0),
            2,
            None,
            Some(proj),
        )
        .unwrap();
        let n = p.n_rows();
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (alpha, beta) = (0.7, -2.3);
        let comb: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + beta * b).collect();
        let mut pu = vec![0.0; n];
        let mut pv = vec![0.0; n];
        let mut pc = vec![0.0; n];
        p.apply(&u, &mut pu);
        p.apply(&v, &mut pv);
        p.apply(&comb, &mut pc);
        let mut err: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for i in 0..n {
            err = err.max((pc[i] - alpha * pu[i] - beta * pv[i]).abs());
            scale = scale.max(pc[i].abs());
        }
        assert!(err <= 1e-12 * (1.0 + scale), "nonlinearity {err:e}");
    }

    #[test]
    fn sigma_components_solve_independently() {
        let mass = spd_tridiag(5, 3.0);
        let p = RieszPreconditioner::new(&spd_tridiag(4, 4.0), &mass, 3, None, None).unwrap();
        let n = p.n_rows();
        assert_eq!(n, 4 + 3 * 5);
        let mut x = vec![0.0; n];
        // Populate only the middle component; others must stay zero.
        for i in 0..5 {
            x[4 + 5 + i] = (i + 1) as f64;
        }
        let mut y = vec![0.0; n];
        p.apply(&x, &mut y);
        assert!(y[..9].iter().all(|&v| v == 0.0));
        assert!(y[14..].iter().all(|&v| v == 0.0));
        // The populated component is the mass solve of its slice.
        let chol = SparseCholesky::factor(&mass, None).unwrap();
        let expect = chol.solve_vec(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        for i in 0..5 {
            assert!((y[9 + i] - expect[i]).abs() <= 1e-13);
        }
    }
}
