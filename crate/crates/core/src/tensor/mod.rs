//! Dense vectors and matrices, the norm suite, sign and matrix-sign operators,
//! and the density functions φ_q / ψ_q.

mod linalg;
mod matrix;
mod ops;
mod vector;

pub use linalg::{
    check_psd, pd_inverse, psd_sqrt, singular_values, svd, svd_with_tol, sym_eigen, SvdFactorization, DEFAULT_RANK_TOL,
};
pub use matrix::DenseMatrix;
pub use ops::{density_phi, density_psi, matrix_abs, msign, msign_default, newton_schulz, Norm, NS_COEFFS};
pub use vector::{sign_vec, DenseVector};

#[allow(unused_imports)]
pub(crate) use vector::sign;
