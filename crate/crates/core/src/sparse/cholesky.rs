//! Simplicial sparse Cholesky (LL^T), up-looking, with an elimination-tree
//! symbolic phase. Factors are cached by the nonlinear drivers and reused
//! across iterations; at the mesh sizes targeted here a factor-solve is far
//! cheaper than re-converging an unpreconditioned Krylov iteration.

use super::csr::CsrMatrix;
use super::ordering::nested_dissection;
use crate::error::{Error, Result};

#[derive(Debug)]
pub struct SparseCholesky {
    n: usize,
    /// perm[new] = old
    perm: Vec<u32>,
    /// L stored by column: col_ptr / rows / vals, diagonal entry first.
    col_ptr: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
}

impl SparseCholesky {
    /// Factor a symmetric positive definite matrix (full pattern stored).
    /// `positions` enables the fill-reducing ordering; without it the
    /// natural order is used.
    pub fn factor(a: &CsrMatrix, positions: Option<&[[f64; 3]]>) -> Result<SparseCholesky> {
        if a.n_rows != a.n_cols {
            return Err(Error::InvalidParameter("cholesky needs a square matrix".into()));
        }
        let n = a.n_rows;
        let perm: Vec<u32> = match positions {
            Some(pos) => nested_dissection(a, pos),
            None => (0..n as u32).collect(),
        };
        let mut iperm = vec![0u32; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old as usize] = new as u32;
        }

        // Upper triangle of the permuted matrix, by column (CSC), rows sorted.
        let mut up_counts = vec![0usize; n];
        for old_r in 0..n {
            let (cols, _) = a.row(old_r);
            let nr = iperm[old_r] as usize;
            for &old_c in cols {
                let nc = iperm[old_c as usize] as usize;
                if nr <= nc {
                    up_counts[nc] += 1;
                }
            }
        }
        let mut up_ptr = Vec::with_capacity(n + 1);
        up_ptr.push(0usize);
        for k in 0..n {
            up_ptr.push(up_ptr[k] + up_counts[k]);
        }
        let nnz_up = up_ptr[n];
        let mut up_rows = vec![0u32; nnz_up];
        let mut up_vals = vec![0.0f64; nnz_up];
        let mut cursor = up_ptr[..n].to_vec();
        for old_r in 0..n {
            let (cols, vals) = a.row(old_r);
            let nr = iperm[old_r] as usize;
            for (&old_c, &v) in cols.iter().zip(vals) {
                let nc = iperm[old_c as usize] as usize;
                if nr <= nc {
                    let slot = cursor[nc];
                    up_rows[slot] = nr as u32;
                    up_vals[slot] = v;
                    cursor[nc] += 1;
                }
            }
        }
        for k in 0..n {
            let span = up_ptr[k]..up_ptr[k + 1];
            let mut idx: Vec<usize> = span.clone().collect();
            idx.sort_unstable_by_key(|&i| up_rows[i]);
            let rs: Vec<u32> = idx.iter().map(|&i| up_rows[i]).collect();
            let vs: Vec<f64> = idx.iter().map(|&i| up_vals[i]).collect();
            up_rows[span.clone()].copy_from_slice(&rs);
            up_vals[span].copy_from_slice(&vs);
        }

        // Elimination tree (Liu's algorithm with path compression).
        let mut parent = vec![-1i64; n];
        let mut ancestor = vec![-1i64; n];
        for k in 0..n {
            for p in up_ptr[k]..up_ptr[k + 1] {
                let mut i = up_rows[p] as i64;
                while i != -1 && (i as usize) < k {
                    let next = ancestor[i as usize];
                    ancestor[i as usize] = k as i64;
                    if next == -1 {
                        parent[i as usize] = k as i64;
                        break;
                    }
                    i = next;
                }
            }
        }

        // Row patterns of L via ereach; first pass counts entries per column.
        let mut mark = vec![u32::MAX; n];
        let mut col_count = vec![1usize; n]; // diagonal
        let mut reach: Vec<u32> = Vec::with_capacity(64);
        for k in 0..n {
            mark[k] = k as u32;
            for p in up_ptr[k]..up_ptr[k + 1] {
                let mut j = up_rows[p] as usize;
                while j < k && mark[j] != k as u32 {
                    mark[j] = k as u32;
                    col_count[j] += 1;
                    j = parent[j] as usize; // parent exists: j reaches k
                }
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        col_ptr.push(0usize);
        for k in 0..n {
            col_ptr.push(col_ptr[k] + col_count[k]);
        }
        let nnz_l = col_ptr[n];
        let mut rows = vec![0u32; nnz_l];
        let mut vals = vec![0.0f64; nnz_l];
        let mut fill = vec![0usize; n]; // entries used so far per column

        // Numeric phase: compute row k of L against columns in the reach.
        let mut mark2 = vec![u32::MAX; n];
        let mut x = vec![0.0f64; n];
        for k in 0..n {
            reach.clear();
            mark2[k] = k as u32;
            let mut akk = 0.0;
            for p in up_ptr[k]..up_ptr[k + 1] {
                let r = up_rows[p] as usize;
                if r == k {
                    akk = up_vals[p];
                    continue;
                }
                x[r] = up_vals[p];
                let mut j = r;
                while j < k && mark2[j] != k as u32 {
                    mark2[j] = k as u32;
                    reach.push(j as u32);
                    j = parent[j] as usize;
                }
            }
            reach.sort_unstable();
            let mut d = akk;
            for &ju in &reach {
                let j = ju as usize;
                let head = col_ptr[j];
                let lkj = x[j] / vals[head];
                x[j] = 0.0;
                for p in head + 1..head + fill[j] {
                    x[rows[p] as usize] -= vals[p] * lkj;
                }
                d -= lkj * lkj;
                // Append L[k,j] to column j (rows arrive in increasing k).
                let slot = head + fill[j];
                rows[slot] = k as u32;
                vals[slot] = lkj;
                fill[j] += 1;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    column: k,
                    pivot: d,
                });
            }
            let head = col_ptr[k];
            rows[head] = k as u32;
            vals[head] = d.sqrt();
            fill[k] = 1;
        }

        Ok(SparseCholesky {
            n,
            perm,
            col_ptr,
            rows,
            vals,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.len()
    }

    /// Solve A x = b.
    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        debug_assert_eq!(b.len(), self.n);
        debug_assert_eq!(x.len(), self.n);
        let mut y = vec![0.0f64; self.n];
        for k in 0..self.n {
            y[k] = b[self.perm[k] as usize];
        }
        // Forward: L z = Pb (column-oriented).
        for j in 0..self.n {
            let head = self.col_ptr[j];
            let zj = y[j] / self.vals[head];
            y[j] = zj;
            for p in head + 1..self.col_ptr[j + 1] {
                y[self.rows[p] as usize] -= self.vals[p] * zj;
            }
        }
        // Backward: L^T w = z.
        for j in (0..self.n).rev() {
            let head = self.col_ptr[j];
            let mut acc = y[j];
            for p in head + 1..self.col_ptr[j + 1] {
                acc -= self.vals[p] * y[self.rows[p] as usize];
            }
            y[j] = acc / self.vals[head];
        }
        for k in 0..self.n {
            x[self.perm[k] as usize] = y[k];
        }
    }

    /// Convenience allocating solve.
    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        self.solve(b, &mut x);
        x
    }
}
