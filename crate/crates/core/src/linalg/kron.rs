use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// `(Cᵀ ⊗ A) Vec(B) = Vec(A B C)` without forming the Kronecker product.
///
/// `vec_b` is the column-stacked `m x n` matrix `B`, with `A` `m x m` and
/// `C` `n x n`.
pub fn kron_apply(a: &DenseMatrix, c: &DenseMatrix, vec_b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() || !c.is_square() {
        return Err(Error::dim(format!(
            "kron_apply needs square factors, got {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            c.rows(),
            c.cols()
        )));
    }
    let (m, n) = (a.rows(), c.rows());
    if vec_b.len() != m * n {
        return Err(Error::dim(format!(
            "Vec(B) has length {}, expected {m}*{n}",
            vec_b.len()
        )));
    }
    let b = DenseMatrix::from_vec_colmajor(m, n, vec_b)?;
    Ok(a.matmul(&b)?.matmul(c)?.to_vec_colmajor())
}

/// Materializes `A ⊗ B`. Only meant for small oracles and diagnostics.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    let (ar, ac, br, bc) = (a.rows(), a.cols(), b.rows(), b.cols());
    let mut out = DenseMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[(i, j)];
            for k in 0..br {
                for l in 0..bc {
                    out[(i * br + k, j * bc + l)] = aij * b[(k, l)];
                }
            }
        }
    }
    out
}
