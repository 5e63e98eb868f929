//! Sparse linear algebra: CSR storage, a fill-reducing direct factorization,
//! Krylov iterations, and the block-operator plumbing used by the mixed
//! quasi-Newton solve.

mod cholesky;
mod csr;
mod io;
mod krylov;
mod ops;
mod ordering;
mod riesz;

pub use cholesky::SparseCholesky;
pub use csr::CsrMatrix;
pub use io::write_matrix_market;
pub use krylov::{cg_solve, gmres_solve, pcg_solve, KrylovConfig, KrylovMethod, KrylovStats};
pub use ops::{BlockOperator, FnOp, LinearOp, WeightedMeanProjector};
pub use ordering::nested_dissection;
pub use riesz::RieszPreconditioner;
