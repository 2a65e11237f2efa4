//! Dense real matrix primitives used by the entropy estimator.

mod eigen;
mod gram;
mod matrix;

pub use eigen::{
    sym_eigenvalues, sym_eigenvalues_with, EigenSolver, JACOBI_MAX_SWEEPS, JACOBI_TOL, SYMMETRY_TOL,
};
pub use gram::{
    gaussian_gram, gaussian_gram_flat, gram_from_sq_distances, normalize_gram,
    pairwise_sq_distances, GramPair,
};
pub use matrix::{hadamard, DenseMatrix};
