//! Matrix Market coordinate output for offline inspection of assembled
//! systems.

use std::io::Write;

use super::csr::CsrMatrix;
use crate::error::Result;

/// Writes the matrix in Matrix Market coordinate format (1-based indices,
/// general symmetry class).
pub fn write_matrix_market<W: Write>(a: &CsrMatrix, out: &mut W) -> Result<()> {
    writeln!(out, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(out, "{} {} {}", a.n_rows, a.n_cols, a.nnz())?;
    for r in 0..a.n_rows {
        let (cols, vals) = a.row(r);
        for (&c, &v) in cols.iter().zip(vals) {
            writeln!(out, "{} {} {:.17e}", r + 1, c + 1, v)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_format_roundtrips_through_text() {
        let a = CsrMatrix::from_triplets(2, 3, &[(0, 0, 1.5), (1, 2, -0.25)]).unwrap();
        let mut buf = Vec::new();
        write_matrix_market(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "%%MatrixMarket matrix coordinate real general"
        );
        assert_eq!(lines.next().unwrap(), "2 3 2");
        let entries: Vec<(usize, usize, f64)> = lines
            .map(|l| {
                let mut it = l.split_whitespace();
                (
                    it.next().unwrap().parse().unwrap(),
                    it.next().unwrap().parse().unwrap(),
                    it.next().unwrap().parse().unwrap(),
                )
            })
            .collect();
        assert_eq!(entries[0], (1, 1, 1.5));
        assert_eq!(entries[1], (2, 3, -0.25));
    }
}
