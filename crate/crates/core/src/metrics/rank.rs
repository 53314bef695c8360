use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::Result;
use crate::nn::Model;
use crate::tensor::Tensor;

pub const DEFAULT_RANK_TOL: f64 = 1e-3;

/// Number of singular values above `rel_tol * sigma_max` (0 for a zero
/// matrix). Singular values come from the eigenvalues of the Gram matrix.
pub fn matrix_rank(m: &Tensor, rel_tol: f64) -> usize {
    let (n, d) = (m.rows(), m.cols());
    if n == 0 || d == 0 {
        return 0;
    }
    let a = DMatrix::from_row_slice(n, d, m.data());
    let gram = if d <= n { a.transpose() * &a } else { &a * a.transpose() };
    let eig = SymmetricEigen::new(gram);
    let sv: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Numerical rank of the pre-head feature matrix on `x`.
pub fn feature_rank(model: &Model, x: &Tensor, rel_tol: f64) -> Result<usize> {
    Ok(matrix_rank(&model.features(x)?, rel_tol))
}
