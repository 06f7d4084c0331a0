//! Symmetric eigendecomposition by cyclic Jacobi rotations, and the
//! eigenvalue-modifying `pos_eig` built on it.

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

const MAX_SWEEPS: usize = 100;
const OFF_DIAG_RTOL: f64 = 1e-12;

/// `A = Q diag(eigenvalues) Qᵀ`, eigenvalues ascending, eigenvectors in the
/// columns of `Q`.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DenseMatrix,
}

impl EigenDecomposition {
    /// Rebuilds `Q diag(values) Qᵀ` for an arbitrary replacement spectrum.
    pub fn reassemble(&self, values: &[f64]) -> DenseMatrix {
        let q = &self.eigenvectors;
        let n = q.rows();
        let mut out = DenseMatrix::zeros(n, n);
        for (k, &lam) in values.iter().enumerate() {
            if lam == 0.0 {
                continue;
            }
            for i in 0..n {
                let qik = lam * q[(i, k)];
                if qik == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[(i, j)] += qik * q[(j, k)];
                }
            }
        }
        out.symmetrize();
        out
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(0.0)
    }
}

fn off_diag_norm(a: &DenseMatrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

pub fn sym_eig(a: &DenseMatrix) -> Result<EigenDecomposition> {
    a.check_symmetric()?;
    if !a.is_finite() {
        return Err(Error::dim("matrix has non-finite entries"));
    }
    let n = a.rows();
    let mut m = a.clone();
    m.symmetrize();
    let mut v = DenseMatrix::identity(n);
    let target = OFF_DIAG_RTOL * a.frobenius_norm();

    let mut converged = off_diag_norm(&m) <= target;
    let mut sweeps = 0;
    while !converged && sweeps < MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let tau = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, p, q, c, s);
            }
        }
        sweeps += 1;
        converged = off_diag_norm(&m) <= target;
    }
    if !converged {
        return Err(Error::NoConvergence {
            sweeps,
            off_norm: off_diag_norm(&m),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].total_cmp(&m[(j, j)]));
    let eigenvalues = order.iter().map(|&i| m[(i, i)]).collect();
    let mut eigenvectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            eigenvectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

// A <- Jᵀ A J, V <- V J with J the (p, q) plane rotation [c s; -s c].
fn rotate(m: &mut DenseMatrix, v: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let n = m.rows();
    for k in 0..n {
        let (akp, akq) = (m[(k, p)], m[(k, q)]);
        m[(k, p)] = c * akp - s * akq;
        m[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let (apk, aqk) = (m[(p, k)], m[(q, k)]);
        m[(p, k)] = c * apk - s * aqk;
        m[(q, k)] = s * apk + c * aqk;
    }
    m[(p, q)] = 0.0;
    m[(q, p)] = 0.0;
    for k in 0..n {
        let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Default clamp window for `pos_eig`: `1e-12 * max |λ|`.
pub fn default_eig_tol(eigenvalues: &[f64]) -> f64 {
    1e-12 * eigenvalues.iter().fold(0.0f64, |m, l| m.max(l.abs()))
}

/// Maps one eigenvalue through the Pos-Eig rule: values below `-tol` are
/// scaled by `gamma`, values in `[-tol, 0)` are clamped to zero.
#[inline]
pub fn pos_eig_scalar(lambda: f64, gamma: f64, tol: f64) -> f64 {
    if lambda < -tol {
        gamma * lambda
    } else if lambda < 0.0 {
        0.0
    } else {
        lambda
    }
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 || !gamma.is_finite() {
        return Err(Error::config(format!("pos_eig gamma must be <= 0, got {gamma}")));
    }
    Ok(())
}

/// Replaces the negative eigenvalues of a symmetric matrix by `gamma * λ`
/// (`gamma <= 0`). `tol_eig = None` uses [`default_eig_tol`].
pub fn pos_eig(a: &DenseMatrix, gamma: f64, tol_eig: Option<f64>) -> Result<DenseMatrix> {
    check_gamma(gamma)?;
    if let Some(t) = tol_eig {
        if !(t > 0.0) {
            return Err(Error::config(format!("tol_eig must be > 0, got {t}")));
        }
    }
    let eig = sym_eig(a)?;
    if eig.min_eigenvalue() >= 0.0 {
        let mut out = a.clone();
        out.symmetrize();
        return Ok(out);
    }
    let tol = tol_eig.unwrap_or_else(|| default_eig_tol(&eig.eigenvalues));
    let modified: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| pos_eig_scalar(l, gamma, tol))
        .collect();
    Ok(eig.reassemble(&modified))
}

/// `|A|`: flips the sign of every negative eigenvalue.
pub fn abs_eig(a: &DenseMatrix) -> Result<DenseMatrix> {
    let eig = sym_eig(a)?;
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|l| l.abs()).collect();
    Ok(eig.reassemble(&abs))
}

pub fn min_eigenvalue(a: &DenseMatrix) -> Result<f64> {
    Ok(sym_eig(a)?.min_eigenvalue())
}
