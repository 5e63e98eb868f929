//! Compressed sparse row matrices with u32 column indices.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<u32>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Build from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> Result<CsrMatrix> {
        for &(r, c, _) in triplets {
            if r >= n_rows || c >= n_cols {
                return Err(Error::InvalidParameter(format!(
                    "triplet ({r},{c}) outside {n_rows}x{n_cols}"
                )));
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_unstable_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut counts = vec![0usize; n_rows];
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        let mut last: Option<(usize, u32)> = None;
        for &k in &order {
            let (r, c, v) = triplets[k];
            if last == Some((r, c as u32)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c as u32);
                vals.push(v);
                counts[r] += 1;
                last = Some((r, c as u32));
            }
        }
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        row_ptr.push(0);
        for r in 0..n_rows {
            row_ptr.push(row_ptr[r] + counts[r]);
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Build a zero-valued matrix from per-row sorted unique column lists.
    pub fn from_pattern(n_cols: usize, rows: &[Vec<u32>]) -> CsrMatrix {
        let n_rows = rows.len();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        row_ptr.push(0);
        let nnz: usize = rows.iter().map(|r| r.len()).sum();
        let mut cols = Vec::with_capacity(nnz);
        for r in rows {
            debug_assert!(r.windows(2).all(|w| w[0] < w[1]));
            cols.extend_from_slice(r);
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        }
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    #[inline]
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    /// Index of entry (r, c) in the value array, if present.
    pub fn position(&self, r: usize, c: usize) -> Option<usize> {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.cols[span.clone()]
            .binary_search(&(c as u32))
            .ok()
            .map(|k| span.start + k)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.position(r, c).map_or(0.0, |p| self.vals[p])
    }

    /// y = A x
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_cols);
        debug_assert_eq!(y.len(), self.n_rows);
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[r] = acc;
        }
    }

    /// y += s * A x
    pub fn matvec_add(&self, x: &[f64], s: f64, y: &mut [f64]) {
        for r in 0..self.n_rows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.cols[k] as usize];
            }
            y[r] += s * acc;
        }
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n_rows).map(|r| self.get(r, r)).collect()
    }

    pub fn set_zero(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = 0.0);
    }

    /// A + s * B over the union pattern (used for Riesz blocks).
    pub fn add_scaled(&self, other: &CsrMatrix, s: f64) -> Result<CsrMatrix> {
        if self.n_rows != other.n_rows || self.n_cols != other.n_cols {
            return Err(Error::ShapeMismatch {
                expected: self.n_rows,
                got: other.n_rows,
                context: "add_scaled",
            });
        }
        let mut trip = Vec::with_capacity(self.nnz() + other.nnz());
        for r in 0..self.n_rows {
            let (c1, v1) = self.row(r);
            for (c, v) in c1.iter().zip(v1) {
                trip.push((r, *c as usize, *v));
            }
            let (c2, v2) = other.row(r);
            for (c, v) in c2.iter().zip(v2) {
                trip.push((r, *c as usize, s * *v));
            }
        }
        CsrMatrix::from_triplets(self.n_rows, self.n_cols, &trip)
    }

    /// Keep rows/cols with index < k (principal submatrix).
    pub fn principal_submatrix(&self, k: usize) -> CsrMatrix {
        let mut row_ptr = Vec::with_capacity(k + 1);
        row_ptr.push(0usize);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        for r in 0..k {
            let (cs, vs) = self.row(r);
            for (c, v) in cs.iter().zip(vs) {
                if (*c as usize) < k {
                    cols.push(*c);
                    vals.push(*v);
                }
            }
            row_ptr.push(cols.len());
        }
        CsrMatrix {
            n_rows: k,
            n_cols: k,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Horizontal concatenation [A0 | A1 | ...]; blocks must agree on rows.
    pub fn hstack(blocks: &[&CsrMatrix]) -> Result<CsrMatrix> {
        let n_rows = blocks.first().map_or(0, |b| b.n_rows);
        for b in blocks {
            if b.n_rows != n_rows {
                return Err(Error::ShapeMismatch {
                    expected: n_rows,
                    got: b.n_rows,
                    context: "hstack",
                });
            }
        }
        let n_cols: usize = blocks.iter().map(|b| b.n_cols).sum();
        let nnz: usize = blocks.iter().map(|b| b.nnz()).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for r in 0..n_rows {
            let mut offset = 0u32;
            for b in blocks {
                let (cs, vs) = b.row(r);
                cols.extend(cs.iter().map(|c| c + offset));
                vals.extend_from_slice(vs);
                offset += b.n_cols as u32;
            }
            row_ptr.push(cols.len());
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Vertical concatenation; blocks must agree on columns.
    pub fn vstack(blocks: &[&CsrMatrix]) -> Result<CsrMatrix> {
        let n_cols = blocks.first().map_or(0, |b| b.n_cols);
        for b in blocks {
            if b.n_cols != n_cols {
                return Err(Error::ShapeMismatch {
                    expected: n_cols,
                    got: b.n_cols,
                    context: "vstack",
                });
            }
        }
        let n_rows: usize = blocks.iter().map(|b| b.n_rows).sum();
        let nnz: usize = blocks.iter().map(|b| b.nnz()).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for b in blocks {
            for r in 0..b.n_rows {
                let (cs, vs) = b.row(r);
                cols.extend_from_slice(cs);
                vals.extend_from_slice(vs);
                row_ptr.push(cols.len());
            }
        }
        Ok(CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
        })
    }

    /// Block-diagonal matrix assembled from the given blocks.
    pub fn block_diag(blocks: &[&CsrMatrix]) -> CsrMatrix {
        let n_rows: usize = blocks.iter().map(|b| b.n_rows).sum();
        let n_cols: usize = blocks.iter().map(|b| b.n_cols).sum();
        let nnz: usize = blocks.iter().map(|b| b.nnz()).sum();
        let mut row_ptr = Vec::with_capacity(n_rows + 1);
        let mut cols = Vec::with_capacity(nnz);
        let mut vals = Vec::with_capacity(nnz);
        row_ptr.push(0);
        let mut col_offset = 0u32;
        for b in blocks {
            for r in 0..b.n_rows {
                let (cs, vs) = b.row(r);
                cols.extend(cs.iter().map(|c| c + col_offset));
                vals.extend_from_slice(vs);
                row_ptr.push(cols.len());
            }
            col_offset += b.n_cols as u32;
        }
        CsrMatrix {
            n_rows,
            n_cols,
            row_ptr,
            cols,
            vals,
        }
    }

    /// Max |A - A^T| entry, for symmetry checks in tests.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n_rows {
            let (cs, vs) = self.row(r);
            for (c, v) in cs.iter().zip(vs) {
                worst = worst.max((v - self.get(*c as usize, r)).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[(2, 1, 4.0), (0, 0, 1.0), (2, 1, -1.0), (0, 2, 2.0)],
        )
        .unwrap();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(2, 1), 3.0);
        assert_eq!(a.get(0, 2), 2.0);
        assert_eq!(a.get(1, 1), 0.0);
        let mut y = vec![0.0; 3];
        a.matvec(&[1.0, 2.0, 3.0], &mut y);
        assert_eq!(y, vec![7.0, 0.0, 6.0]);
    }

    #[test]
    fn out_of_range_triplet_rejected() {
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn stacking_matches_dense_layout() {
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let b = CsrMatrix::from_triplets(2, 3, &[(0, 2, 3.0), (1, 0, 4.0)]).unwrap();
        let h = CsrMatrix::hstack(&[&a, &b]).unwrap();
        assert_eq!((h.n_rows, h.n_cols), (2, 5));
        assert_eq!(h.get(0, 0), 1.0);
        assert_eq!(h.get(0, 4), 3.0);
        assert_eq!(h.get(1, 2), 4.0);
        let c = CsrMatrix::from_triplets(1, 2, &[(0, 1, 5.0)]).unwrap();
        let v = CsrMatrix::vstack(&[&a, &c]).unwrap();
        assert_eq!((v.n_rows, v.n_cols), (3, 2));
        assert_eq!(v.get(2, 1), 5.0);
        let d = CsrMatrix::block_diag(&[&a, &b]);
        assert_eq!((d.n_rows, d.n_cols), (4, 5));
        assert_eq!(d.get(1, 1), 2.0);
        assert_eq!(d.get(2, 4), 3.0);
        assert_eq!(d.get(3, 2), 4.0);
        assert!(CsrMatrix::hstack(&[&a, &c]).is_err());
        assert!(CsrMatrix::vstack(&[&a, &b]).is_err());
    }

    #[test]
    fn principal_submatrix_drops_tail() {
        let a = CsrMatrix::from_triplets(3, 3, &[(0, 0, 1.), (0, 2, 5.), (2, 2, 7.), (1, 1, 2.)])
            .unwrap();
        let b = a.principal_submatrix(2);
        assert_eq!(b.nnz(), 2);
        assert_eq!(b.get(0, 0), 1.0);
        assert_eq!(b.get(1, 1), 2.0);
    }
}
