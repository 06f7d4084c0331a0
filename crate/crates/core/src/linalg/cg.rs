use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, DenseMatrix};

/// Matrix-free square operator. `apply` writes `A x` into `out`.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], out: &mut [f64]);
}

impl LinearOperator for DenseMatrix {
    fn dim(&self) -> usize {
        debug_assert!(self.is_square());
        self.rows()
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(r), x);
        }
    }
}

/// Wraps a closure as a [`LinearOperator`].
pub struct FnOperator<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnOperator<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        (self.f)(x, out)
    }
}

#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||A x - b|| / max(1, ||b||)` for the returned `x`.
    pub residual: f64,
}

const RESIDUAL_REFRESH: usize = 50;

/// Plain conjugate gradient from a zero start. Stops when the relative
/// residual `||r|| / max(1, ||b||)` drops to `eps_cg` or after `max_iter`
/// iterations, in which case the iterate with the smallest residual is
/// returned.
pub fn cg_solve<A: LinearOperator + ?Sized>(
    op: &A,
    b: &[f64],
    max_iter: usize,
    eps_cg: f64,
) -> Result<CgOutcome> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::dim(format!(
            "right-hand side has length {}, operator dimension is {n}",
            b.len()
        )));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(Error::Breakdown {
            context: "cg".into(),
            iteration: 0,
            reason: "non-finite right-hand side".into(),
        });
    }
    let scale = norm2(b).max(1.0);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut rr = dot(&r, &r);
    if rr.sqrt() / scale <= eps_cg {
        return Ok(CgOutcome {
            x,
            iterations: 0,
            residual: rr.sqrt() / scale,
        });
    }
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut best_x = x.clone();
    let mut best_res = rr.sqrt();

    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= 0.0 {
            return Err(Error::Breakdown {
                context: "cg".into(),
                iteration: iterations,
                reason: format!("curvature pᵀAp = {pap:e} along search direction"),
            });
        }
        let step = rr / pap;
        axpy(step, &p, &mut x);
        if iterations % RESIDUAL_REFRESH == 0 {
            op.apply(&x, &mut ap);
            for ((ri, bi), ai) in r.iter_mut().zip(b).zip(&ap) {
                *ri = bi - ai;
            }
        } else {
            axpy(-step, &ap, &mut r);
        }
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(Error::Breakdown {
                context: "cg".into(),
                iteration: iterations,
                reason: "non-finite residual".into(),
            });
        }
        let res = rr_next.sqrt();
        if res < best_res {
            best_res = res;
            best_x.copy_from_slice(&x);
        }
        if res / scale <= eps_cg {
            break;
        }
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_next;
    }

    // true residual of the returned iterate
    op.apply(&best_x, &mut ap);
    let mut true_res = 0.0;
    for (ai, bi) in ap.iter().zip(b) {
        true_res += (ai - bi) * (ai - bi);
    }
    Ok(CgOutcome {
        x: best_x,
        iterations,
        residual: true_res.sqrt() / scale,
    })
}
