//! Newton directions from block curvature.
//!
//! Every layer contributes two independent damped systems,
//! `((1-α) H_b + α I) d_b = -E[∇_b ξ]` and
//! `((1-α) EhhT ⊗ H_b + α I) Vec(d_W) = -Vec(E[∇_W ξ])`, which EA-CG solves
//! with conjugate gradient. The weight-block product is formed as
//! `Vec(H_b P EhhT)` or, with the rank-one expectation factor,
//! `Vec(H_b (P E[h]) E[h]ᵀ)`, so only `n_t x n_{t-1}` sized storage is used.

use serde::{Deserialize, Serialize};

use crate::curvature::LayerCurvature;
use crate::error::{Error, Result};
use crate::fcnn::{FcnnModel, LayerGradients};
use crate::linalg::{cg_solve, dot, sym_eig, DenseMatrix, FnOperator, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvpMode {
    /// `Vec(H_b P E[h hᵀ])`
    ExactKron,
    /// `Vec(H_b P E[h] E[h]ᵀ)`
    EaOneRank,
}

/// Split of the damping between the two Kronecker factors in KFI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiPolicy {
    Unit,
    /// `π = sqrt((tr(EhhT)/n_{t-1}) / (tr(H_b)/n_t))`
    TraceNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub alpha: f64,
    pub max_cg: usize,
    pub eps_cg: f64,
    pub hvp_mode: HvpMode,
    pub pi_policy: PiPolicy,
    /// KFI only: replace the first-layer factor by `E[h⁰]E[h⁰]ᵀ + π√α I`
    /// and invert it with Sherman-Morrison.
    pub kfi_rank_one_first_layer: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            max_cg: 20,
            eps_cg: 1e-5,
            hvp_mode: HvpMode::EaOneRank,
            pi_policy: PiPolicy::Unit,
            kfi_rank_one_first_layer: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.max_cg == 0 {
            return Err(Error::config("max_cg must be at least 1"));
        }
        if !(self.eps_cg > 0.0) {
            return Err(Error::config(format!("eps_cg must be > 0, got {}", self.eps_cg)));
        }
        Ok(())
    }
}

/// Descent direction per layer, `weight[t-1] = d_{W^t}`, `bias[t-1] = d_{b^t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NewtonDirection {
    pub weight: Vec<DenseMatrix>,
    pub bias: Vec<Vec<f64>>,
}

impl NewtonDirection {
    /// `-g`, the steepest-descent direction.
    pub fn negated_gradient(grads: &LayerGradients) -> Self {
        Self {
            weight: grads.weight.iter().map(|w| w.scaled(-1.0)).collect(),
            bias: grads
                .bias
                .iter()
                .map(|b| b.iter().map(|v| -v).collect())
                .collect(),
        }
    }

    /// `⟨d, g⟩` over all parameters.
    pub fn dot_gradient(&self, grads: &LayerGradients) -> f64 {
        let w: f64 = self
            .weight
            .iter()
            .zip(&grads.weight)
            .map(|(d, g)| dot(d.as_slice(), g.as_slice()))
            .sum();
        let b: f64 = self.bias.iter().zip(&grads.bias).map(|(d, g)| dot(d, g)).sum();
        w + b
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend(w.to_vec_colmajor());
            out.extend_from_slice(b);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().all(DenseMatrix::is_finite)
            && self.bias.iter().flatten().all(|v| v.is_finite())
    }

    /// `θ ← θ + η d`
    pub fn apply_to(&self, model: &mut FcnnModel, eta: f64) -> Result<()> {
        if self.weight.len() != model.depth() {
            return Err(Error::dim("direction depth does not match model"));
        }
        for ((layer, dw), db) in model.layers_mut().iter_mut().zip(&self.weight).zip(&self.bias) {
            layer.weight.add_scaled(eta, dw)?;
            crate::linalg::axpy(eta, db, &mut layer.bias);
        }
        Ok(())
    }
}

fn check_shapes(curv: &[LayerCurvature], grads: &LayerGradients) -> Result<()> {
    if curv.len() != grads.bias.len() || curv.len() != grads.weight.len() {
        return Err(Error::dim(format!(
            "{} curvature layers for {} gradient layers",
            curv.len(),
            grads.bias.len()
        )));
    }
    for (t, (lc, (gb, gw))) in curv.iter().zip(grads.bias.iter().zip(&grads.weight)).enumerate() {
        if lc.hb.rows() != gb.len()
            || gw.rows() != lc.fan_out()
            || gw.cols() != lc.fan_in()
            || lc.eh.len() != lc.fan_in()
        {
            return Err(Error::dim(format!("layer {}: curvature and gradient shapes differ", t + 1)));
        }
    }
    Ok(())
}

fn in_layer(err: Error, layer: usize, system: &str) -> Error {
    match err {
        Error::Breakdown { iteration, reason, .. } => Error::Breakdown {
            context: format!("layer {layer} {system} system"),
            iteration,
            reason,
        },
        other => other,
    }
}

/// EA-CG: per-layer damped systems solved matrix-free by conjugate gradient.
pub fn ea_cg_direction(
    curv: &[LayerCurvature],
    grads: &LayerGradients,
    cfg: &SolverConfig,
) -> Result<NewtonDirection> {
    cfg.validate()?;
    check_shapes(curv, grads)?;
    let alpha = cfg.alpha;
    let mut weight = Vec::with_capacity(curv.len());
    let mut bias = Vec::with_capacity(curv.len());
    for (i, (lc, (gb, gw))) in curv.iter().zip(grads.bias.iter().zip(&grads.weight)).enumerate() {
        let layer = i + 1;

        let mut damped = lc.hb.scaled(1.0 - alpha);
        damped.add_to_diag(alpha);
        let rhs: Vec<f64> = gb.iter().map(|v| -v).collect();
        let sol = cg_solve(&damped, &rhs, cfg.max_cg, cfg.eps_cg).map_err(|e| in_layer(e, layer, "bias"))?;
        bias.push(sol.x);

        let (n_out, n_in) = (lc.fan_out(), lc.fan_in());
        let rhs: Vec<f64> = gw.to_vec_colmajor().into_iter().map(|v| -v).collect();
        let sol = match cfg.hvp_mode {
            HvpMode::ExactKron => {
                let op = FnOperator::new(n_out * n_in, |v: &[f64], out: &mut [f64]| {
                    exact_kron_hvp(lc, alpha, v, out)
                });
                cg_solve(&op, &rhs, cfg.max_cg, cfg.eps_cg)
            }
            HvpMode::EaOneRank => {
                let op = FnOperator::new(n_out * n_in, |v: &[f64], out: &mut [f64]| {
                    one_rank_hvp(lc, alpha, v, out)
                });
                cg_solve(&op, &rhs, cfg.max_cg, cfg.eps_cg)
            }
        }
        .map_err(|e| in_layer(e, layer, "weight"))?;
        weight.push(DenseMatrix::from_vec_colmajor(n_out, n_in, &sol.x)?);
    }
    Ok(NewtonDirection { weight, bias })
}

// out = (1-α) Vec(H_b P EhhT) + α v
fn exact_kron_hvp(lc: &LayerCurvature, alpha: f64, v: &[f64], out: &mut [f64]) {
    let (n_out, n_in) = (lc.fan_out(), lc.fan_in());
    let p = DenseMatrix::from_vec_colmajor(n_out, n_in, v).expect("operator dimension");
    let prod = lc
        .hb
        .matmul(&p)
        .and_then(|hp| hp.matmul(&lc.ehh_t))
        .expect("curvature shapes checked");
    for c in 0..n_in {
        for r in 0..n_out {
            let idx = r + c * n_out;
            out[idx] = (1.0 - alpha) * prod[(r, c)] + alpha * v[idx];
        }
    }
}

// out = (1-α) Vec(H_b (P E[h]) E[h]ᵀ) + α v, using only length-n vectors.
fn one_rank_hvp(lc: &LayerCurvature, alpha: f64, v: &[f64], out: &mut [f64]) {
    let n_out = lc.fan_out();
    let mut p_eh = vec![0.0; n_out];
    for (c, &e) in lc.eh.iter().enumerate() {
        let col = &v[c * n_out..(c + 1) * n_out];
        for (acc, &pv) in p_eh.iter_mut().zip(col) {
            *acc += pv * e;
        }
    }
    let mut w = vec![0.0; n_out];
    lc.hb.apply(&p_eh, &mut w);
    for (c, &e) in lc.eh.iter().enumerate() {
        let base = c * n_out;
        for r in 0..n_out {
            out[base + r] = (1.0 - alpha) * w[r] * e + alpha * v[base + r];
        }
    }
}

/// `(E[h]E[h]ᵀ + damp I)⁻¹ v` in `O(n)`.
pub fn sherman_morrison_apply(eh: &[f64], damp: f64, v: &[f64]) -> Result<Vec<f64>> {
    if !(damp > 0.0) {
        return Err(Error::config(format!("Sherman-Morrison damping must be > 0, got {damp}")));
    }
    if eh.len() != v.len() {
        return Err(Error::dim(format!(
            "rank-one factor has length {}, vector has length {}",
            eh.len(),
            v.len()
        )));
    }
    let coeff = dot(eh, v) / (damp + dot(eh, eh));
    Ok(v.iter().zip(eh).map(|(vi, ui)| (vi - coeff * ui) / damp).collect())
}

fn spd_inverse(a: &DenseMatrix, what: &str, layer: usize) -> Result<DenseMatrix> {
    let eig = sym_eig(a)?;
    let min = eig.min_eigenvalue();
    if !(min > 0.0) {
        return Err(Error::Breakdown {
            context: format!("layer {layer} {what} inverse"),
            iteration: 0,
            reason: format!("damped factor is singular (min eigenvalue {min:e})"),
        });
    }
    let inv: Vec<f64> = eig.eigenvalues.iter().map(|l| 1.0 / l).collect();
    Ok(eig.reassemble(&inv))
}

pub fn pi_factor(lc: &LayerCurvature, policy: PiPolicy) -> f64 {
    match policy {
        PiPolicy::Unit => 1.0,
        PiPolicy::TraceNorm => {
            let a = lc.ehh_t.trace() / lc.fan_in() as f64;
            let g = lc.hb.trace() / lc.fan_out() as f64;
            if a > 0.0 && g > 0.0 {
                (a / g).sqrt()
            } else {
                1.0
            }
        }
    }
}

/// Kronecker-factored inverse:
/// `d_W = -(H_b + (√α/π) I)⁻¹ E[∇_W ξ] (EhhT + π√α I)⁻¹`,
/// `d_b = -(H_b + √α I)⁻¹ E[∇_b ξ]`.
pub fn kfi_direction(
    curv: &[LayerCurvature],
    grads: &LayerGradients,
    cfg: &SolverConfig,
) -> Result<NewtonDirection> {
    cfg.validate()?;
    check_shapes(curv, grads)?;
    let sa = cfg.alpha.sqrt();
    let mut weight = Vec::with_capacity(curv.len());
    let mut bias = Vec::with_capacity(curv.len());
    for (i, (lc, (gb, gw))) in curv.iter().zip(grads.bias.iter().zip(&grads.weight)).enumerate() {
        let layer = i + 1;
        let pi = pi_factor(lc, cfg.pi_policy);

        let mut g_fac = lc.hb.clone();
        g_fac.add_to_diag(sa / pi);
        let g_inv = spd_inverse(&g_fac, "G", layer)?;
        let left = g_inv.matmul(gw)?;

        let dw = if layer == 1 && cfg.kfi_rank_one_first_layer {
            let mut out = DenseMatrix::zeros(left.rows(), left.cols());
            for r in 0..left.rows() {
                let row = sherman_morrison_apply(&lc.eh, pi * sa, left.row(r))?;
                out.row_mut(r).copy_from_slice(&row);
            }
            out
        } else {
            let mut h_fac = lc.ehh_t.clone();
            h_fac.add_to_diag(pi * sa);
            left.matmul(&spd_inverse(&h_fac, "H", layer)?)?
        };
        weight.push(dw.scaled(-1.0));

        let mut b_fac = lc.hb.clone();
        b_fac.add_to_diag(sa);
        let db = spd_inverse(&b_fac, "bias", layer)?.matvec(gb)?;
        bias.push(db.into_iter().map(|v| -v).collect());
    }
    Ok(NewtonDirection { weight, bias })
}
