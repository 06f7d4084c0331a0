use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Loss applied to the softmax of the network output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Criterion {
    /// `-log ŷ_c`, convex in `h^k`.
    CrossEntropySoftmax,
    /// `1 / (1 + exp(delta * (yᵀŷ - epsilon)))`, bounded and non-convex.
    SigmoidGate { delta: f64, epsilon: f64 },
}

impl Criterion {
    /// The non-convex gate with `delta = 5`, `epsilon = 0.2`.
    pub const fn sigmoid_gate_default() -> Self {
        Criterion::SigmoidGate {
            delta: 5.0,
            epsilon: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Criterion::SigmoidGate { delta, epsilon } = *self {
            if !(delta > 0.0) || !delta.is_finite() {
                return Err(Error::config(format!("sigmoid gate delta must be > 0, got {delta}")));
            }
            if !(0.0..=1.0).contains(&epsilon) {
                return Err(Error::config(format!(
                    "sigmoid gate epsilon must lie in [0, 1], got {epsilon}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_convex(&self) -> bool {
        matches!(self, Criterion::CrossEntropySoftmax)
    }

    /// Loss, gradient and Hessian with respect to `h^k` for a one-hot target.
    pub fn eval(&self, h_k: &[f64], y: &[f64]) -> Result<CriterionEval> {
        let class = one_hot_class(y, h_k.len())?;
        self.eval_class(h_k, class)
    }

    pub fn eval_class(&self, h_k: &[f64], class: usize) -> Result<CriterionEval> {
        let n = h_k.len();
        if class >= n {
            return Err(Error::dim(format!("class {class} out of range for output width {n}")));
        }
        let p = softmax(h_k);
        match *self {
            Criterion::CrossEntropySoftmax => {
                let loss = log_sum_exp(h_k) - h_k[class];
                let mut grad = p.clone();
                grad[class] -= 1.0;
                let mut hess = DenseMatrix::outer(&p, &p).scaled(-1.0);
                for (i, &pi) in p.iter().enumerate() {
                    hess[(i, i)] += pi;
                }
                Ok(CriterionEval { loss, grad, hess })
            }
            Criterion::SigmoidGate { delta, epsilon } => {
                let s = p[class];
                let gate = gate_value(delta * (s - epsilon));
                let c1 = -delta * gate * (1.0 - gate);
                let c2 = delta * delta * gate * (1.0 - gate) * (1.0 - 2.0 * gate);

                // ∂s/∂h = s (e_c - p)
                let mut e_minus_p: Vec<f64> = p.iter().map(|v| -v).collect();
                e_minus_p[class] += 1.0;
                let ds: Vec<f64> = e_minus_p.iter().map(|v| s * v).collect();

                // ∂²s/∂h² = s [(e_c - p)(e_c - p)ᵀ - diag(p) + p pᵀ]
                let mut d2s = DenseMatrix::outer(&e_minus_p, &e_minus_p);
                d2s.add_outer(1.0, &p, &p)?;
                for (i, &pi) in p.iter().enumerate() {
                    d2s[(i, i)] -= pi;
                }
                d2s.scale(s);

                let grad = ds.iter().map(|v| c1 * v).collect();
                let mut hess = d2s.scaled(c1);
                hess.add_outer(c2, &ds, &ds)?;
                hess.symmetrize();
                Ok(CriterionEval {
                    loss: gate,
                    grad,
                    hess,
                })
            }
        }
    }

    pub fn loss_class(&self, h_k: &[f64], class: usize) -> f64 {
        match *self {
            Criterion::CrossEntropySoftmax => log_sum_exp(h_k) - h_k[class],
            Criterion::SigmoidGate { delta, epsilon } => {
                gate_value(delta * (softmax(h_k)[class] - epsilon))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct CriterionEval {
    pub loss: f64,
    pub grad: Vec<f64>,
    pub hess: DenseMatrix,
}

// 1 / (1 + e^u)
fn gate_value(u: f64) -> f64 {
    if u >= 0.0 {
        let e = (-u).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + u.exp())
    }
}

fn log_sum_exp(h: &[f64]) -> f64 {
    let m = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + h.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(h: &[f64]) -> Vec<f64> {
    let m = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = h.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

pub fn one_hot(class: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; n];
    y[class] = 1.0;
    y
}

fn one_hot_class(y: &[f64], n: usize) -> Result<usize> {
    if y.len() != n {
        return Err(Error::dim(format!("target has length {}, output width is {n}", y.len())));
    }
    let mut class = None;
    for (i, &v) in y.iter().enumerate() {
        if v == 1.0 && class.is_none() {
            class = Some(i);
        } else if v != 0.0 {
            return Err(Error::config("target is not a one-hot vector"));
        }
    }
    class.ok_or_else(|| Error::config("target is not a one-hot vector"))
}
