//! Operator abstractions shared by the Krylov solvers: a matrix-free
//! `LinearOp` trait, the 2x2 block operator used by the mixed quasi-Newton
//! system, and the weighted-mean projector that removes the constant
//! nullspace of the potential.

use std::ops::Range;

use super::cholesky::SparseCholesky;
use super::csr::CsrMatrix;
use crate::error::{Error, Result};

/// Anything that can compute y = A x.
pub trait LinearOp {
    fn n_rows(&self) -> usize;
    fn n_cols(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

impl LinearOp for CsrMatrix {
    fn n_rows(&self) -> usize {
        self.n_rows
    }
    fn n_cols(&self) -> usize {
        self.n_cols
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }
}

/// A factorization used as an operator applies the inverse. This is the
/// natural reading for preconditioning.
impl LinearOp for SparseCholesky {
    fn n_rows(&self) -> usize {
        self.n()
    }
    fn n_cols(&self) -> usize {
        self.n()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.solve(x, y);
    }
}

/// Closure-backed operator, mostly for tests and small compositions.
pub struct FnOp<F: Fn(&[f64], &mut [f64])> {
    rows: usize,
    cols: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOp<F> {
    pub fn new(rows: usize, cols: usize, f: F) -> Self {
        FnOp { rows, cols, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOp for FnOp<F> {
    fn n_rows(&self) -> usize {
        self.rows
    }
    fn n_cols(&self) -> usize {
        self.cols
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

/// 2x2 block operator over a partitioned vector [u0; u1]. Blocks may be
/// absent (treated as zero); the mixed quasi-Newton system on the plane has
/// an empty (0,0) block. Row and column group sizes are inferred from the
/// present blocks, so every group needs at least one.
pub struct BlockOperator {
    blocks: [[Option<CsrMatrix>; 2]; 2],
    row_offsets: [usize; 3],
    col_offsets: [usize; 3],
    /// Set when the first subvector (the potential) is defined only up to a
    /// constant; solvers pair this with a [`WeightedMeanProjector`].
    pub constant_phi_nullspace: bool,
}

impl BlockOperator {
    pub fn new(blocks: [[Option<CsrMatrix>; 2]; 2]) -> Result<BlockOperator> {
        let mut row_sizes = [None; 2];
        let mut col_sizes = [None; 2];
        fn claim(
            slot: &mut Option<usize>,
            got: usize,
            context: &'static str,
        ) -> Result<()> {
            match *slot {
                None => {
                    *slot = Some(got);
                    Ok(())
                }
                Some(expected) if expected != got => Err(Error::ShapeMismatch {
                    expected,
                    got,
                    context,
                }),
                Some(_) => Ok(()),
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                if let Some(b) = &blocks[i][j] {
                    claim(&mut row_sizes[i], b.n_rows, "block operator row group")?;
                    claim(&mut col_sizes[j], b.n_cols, "block operator column group")?;
                }
            }
        }
        let rs = |i: usize| {
            row_sizes[i].ok_or_else(|| {
                Error::InvalidParameter(format!("block operator row group {i} has no blocks"))
            })
        };
        let cs = |j: usize| {
            col_sizes[j].ok_or_else(|| {
                Error::InvalidParameter(format!("block operator column group {j} has no blocks"))
            })
        };
        let (r0, r1) = (rs(0)?, rs(1)?);
        let (c0, c1) = (cs(0)?, cs(1)?);
        Ok(BlockOperator {
            blocks,
            row_offsets: [0, r0, r0 + r1],
            col_offsets: [0, c0, c0 + c1],
            constant_phi_nullspace: false,
        })
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&CsrMatrix> {
        self.blocks[i][j].as_ref()
    }

    /// Mutable access for refilling a block's values in place. The sparsity
    /// pattern and shape must stay unchanged.
    pub fn block_mut(&mut self, i: usize, j: usize) -> Option<&mut CsrMatrix> {
        self.blocks[i][j].as_mut()
    }

    /// Mutable access to several blocks at once, for assemblies that refill
    /// more than one per sweep. Same pattern-preservation contract as
    /// [`BlockOperator::block_mut`].
    pub fn blocks_mut(&mut self) -> &mut [[Option<CsrMatrix>; 2]; 2] {
        &mut self.blocks
    }

    /// Index range of row group `i` in the stacked vector.
    pub fn row_range(&self, i: usize) -> Range<usize> {
        self.row_offsets[i]..self.row_offsets[i + 1]
    }

    pub fn col_range(&self, j: usize) -> Range<usize> {
        self.col_offsets[j]..self.col_offsets[j + 1]
    }
}

impl LinearOp for BlockOperator {
    fn n_rows(&self) -> usize {
        self.row_offsets[2]
    }
    fn n_cols(&self) -> usize {
        self.col_offsets[2]
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for i in 0..2 {
            for j in 0..2 {
                if let Some(b) = &self.blocks[i][j] {
                    b.matvec_add(&x[self.col_range(j)], 1.0, &mut y[self.row_range(i)]);
                }
            }
        }
    }
}

/// Removes the weighted mean of a subvector: v |-> v - (sum w_i v_i / sum w_i) 1
/// on the subrange, other entries untouched. With lumped-mass weights this
/// zeroes the integral of the discrete function, which fixes the additive
/// gauge of the potential. Idempotent and self-adjoint in the weighted inner
/// product.
pub struct WeightedMeanProjector {
    offset: usize,
    weights: Vec<f64>,
    total: f64,
}

impl WeightedMeanProjector {
    pub fn new(offset: usize, weights: Vec<f64>) -> Result<WeightedMeanProjector> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("projector needs weights".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidParameter(
                "projector weights must be positive".into(),
            ));
        }
        let total = weights.iter().sum();
        Ok(WeightedMeanProjector {
            offset,
            weights,
            total,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.weights.len()
    }

    pub fn weighted_mean(&self, v: &[f64]) -> f64 {
        let sub = &v[self.range()];
        let s: f64 = sub.iter().zip(&self.weights).map(|(a, w)| a * w).sum();
        s / self.total
    }

    pub fn project(&self, v: &mut [f64]) {
        let mean = self.weighted_mean(v);
        for a in &mut v[self.range()] {
            *a -= mean;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_from(op: &dyn LinearOp) -> Vec<Vec<f64>> {
        let (m, n) = (op.n_rows(), op.n_cols());
        let mut cols = vec![vec![0.0; m]; n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            op.apply(&e, &mut cols[j]);
            e[j] = 0.0;
        }
        let mut d = vec![vec![0.0; n]; m];
        for i in 0..m {
            for j in 0..n {
                d[i][j] = cols[j][i];
            }
        }
        d
    }

    #[test]
    fn block_operator_matches_dense_assembly() {
        let a01 = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0)]).unwrap();
        let a10 = CsrMatrix::from_triplets(3, 2, &[(0, 1, 4.0), (2, 0, 5.0)]).unwrap();
        let a11 =
            CsrMatrix::from_triplets(3, 3, &[(0, 0, 3.0), (1, 1, 3.0), (2, 2, 3.0)]).unwrap();
        let op = BlockOperator::new([[None, Some(a01)], [Some(a10), Some(a11)]]).unwrap();
        assert_eq!(op.n_rows(), 5);
        assert_eq!(op.n_cols(), 5);
        let d = dense_from(&op);
        // (0,0) is zero.
        assert_eq!(d[0][0], 0.0);
        assert_eq!(d[1][1], 0.0);
        // Off-diagonal and diagonal blocks land at the right offsets.
        assert_eq!(d[0][2], 1.0);
        assert_eq!(d[0][4], 2.0);
        assert_eq!(d[1][3], -1.0);
        assert_eq!(d[2][1], 4.0);
        assert_eq!(d[4][0], 5.0);
        assert_eq!(d[3][3], 3.0);
    }

    #[test]
    fn block_operator_rejects_nonconforming_blocks() {
        let a01 = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.0)]).unwrap();
        let a11 = CsrMatrix::from_triplets(4, 3, &[(0, 0, 1.0)]).unwrap();
        assert!(BlockOperator::new([[None, Some(a01)], [None, Some(a11)]]).is_err());
    }

    #[test]
    fn projector_zeroes_weighted_mean_and_is_idempotent() {
        let w = vec![1.0, 2.0, 3.0, 4.0];
        let p = WeightedMeanProjector::new(1, w.clone()).unwrap();
        let mut v = vec![9.0, 1.0, -2.0, 0.5, 3.0, 7.0];
        p.project(&mut v);
        assert!(p.weighted_mean(&v).abs() <= 1e-13);
        assert_eq!(v[0], 9.0);
        assert_eq!(v[5], 7.0);
        let snapshot = v.clone();
        p.project(&mut v);
        for (a, b) in v.iter().zip(&snapshot) {
            assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn projector_self_adjoint_in_weighted_inner_product() {
        let w = vec![0.5, 1.5, 2.5, 1.0];
        let p = WeightedMeanProjector::new(0, w.clone()).unwrap();
        let u = vec![1.0, -3.0, 2.0, 0.25];
        let v = vec![-2.0, 0.5, 1.0, 4.0];
        let mut pu = u.clone();
        let mut pv = v.clone();
        p.project(&mut pu);
        p.project(&mut pv);
        let dot_w = |a: &[f64], b: &[f64]| -> f64 {
            a.iter().zip(b).zip(&w).map(|((x, y), wi)| x * y * wi).sum()
        };
        let lhs = dot_w(&pu, &v);
        let rhs = dot_w(&u, &pv);
        assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn projector_rejects_nonpositive_weights() {
        assert!(WeightedMeanProjector::new(0, vec![1.0, 0.0]).is_err());
    }
}
