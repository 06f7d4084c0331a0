//! Layer-wise bias-Hessian blocks.
//!
//! The exact recursion runs per instance and is averaged afterwards; the
//! expectation-approximated recursion propagates batch-averaged blocks
//! directly:
//!
//! ```text
//! H^k     = E[∇²_{h^k} ξ]
//! H^{t-1} = (W^tᵀ H^t W^t) ⊙ E[h'h'ᵀ] + diag(E[h'' ⊙ (W^tᵀ ∇_{b^t} ξ)])
//! ```
//!
//! Weight blocks are never materialized; they are represented by the pair
//! `(E[h^{t-1} h^{(t-1)ᵀ}], H^t)` and applied through the Kronecker identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcnn::{BatchEvaluation, FcnnModel, InstanceTrace};
use crate::linalg::{abs_eig, check_gamma, default_eig_tol, pos_eig, pos_eig_scalar, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CurvatureKind {
    TrueBlockDiag,
    /// Positive-curvature Hessian; `gamma = -1` flips negative eigenvalues
    /// (PCH-1), `gamma = 0` zeroes them (PCH-2).
    Pch { gamma: f64 },
    GaussNewton,
    Fisher,
}

impl CurvatureKind {
    pub const PCH1: CurvatureKind = CurvatureKind::Pch { gamma: -1.0 };
    pub const PCH2: CurvatureKind = CurvatureKind::Pch { gamma: 0.0 };

    pub fn validate(&self) -> Result<()> {
        if let CurvatureKind::Pch { gamma } = *self {
            if gamma != -1.0 && gamma != 0.0 {
                return Err(Error::config(format!(
                    "PCH gamma must be -1 (PCH-1) or 0 (PCH-2), got {gamma}"
                )));
            }
        }
        Ok(())
    }

    pub fn label(&self) -> String {
        match *self {
            CurvatureKind::TrueBlockDiag => "True".into(),
            CurvatureKind::Pch { gamma: -1.0 } => "PCH-1".into(),
            CurvatureKind::Pch { gamma: 0.0 } => "PCH-2".into(),
            CurvatureKind::Pch { gamma } => format!("PCH(gamma={gamma})"),
            CurvatureKind::GaussNewton => "GN".into(),
            CurvatureKind::Fisher => "Fisher".into(),
        }
    }
}

/// Curvature for layer `t`: the bias block plus the factors of the weight
/// block `EhhT ⊗ hb`.
#[derive(Debug, Clone)]
pub struct LayerCurvature {
    /// `n_t x n_t`
    pub hb: DenseMatrix,
    /// `E[h^{t-1} h^{(t-1)ᵀ}]`, `n_{t-1} x n_{t-1}`
    pub ehh_t: DenseMatrix,
    /// `E[h^{t-1}]`
    pub eh: Vec<f64>,
    /// `E[h^{(t-1)'} h^{(t-1)'ᵀ}]`; `None` for the first layer.
    pub ehh_t_prime: Option<DenseMatrix>,
    /// `E[h^{(t-1)''} ⊙ (W^tᵀ ∇_{b^t} ξ)]` before any modification; `None`
    /// for the first layer.
    pub diag_term: Option<Vec<f64>>,
}

impl LayerCurvature {
    pub fn fan_in(&self) -> usize {
        self.ehh_t.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.hb.rows()
    }
}

/// How the output block `E[∇²_{h^k} ξ]` is treated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TopBlock {
    AsIs,
    PosEig { gamma: f64 },
}

/// How the activation-curvature diagonal term is treated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DiagTerm {
    Keep,
    Drop,
    PosEig { gamma: f64 },
}

fn check_batch(model: &FcnnModel, batch: &BatchEvaluation) -> Result<()> {
    batch.trace.check_model(model)?;
    if batch.outputs.len() != batch.trace.batch_size()
        || batch.bias_grads.len() != batch.trace.batch_size()
    {
        return Err(Error::dim("batch evaluation is internally inconsistent"));
    }
    Ok(())
}

// (Wᵀ H W) ⊙ outer_prime + diag(diag)
fn propagate(
    h_next: &DenseMatrix,
    w: &DenseMatrix,
    outer_prime: &DenseMatrix,
    diag: Option<&[f64]>,
) -> Result<DenseMatrix> {
    let mut out = h_next.congruence(w)?.hadamard(outer_prime)?;
    if let Some(d) = diag {
        for (i, &v) in d.iter().enumerate() {
            out[(i, i)] += v;
        }
    }
    out.symmetrize();
    Ok(out)
}

fn instance_diag(model: &FcnnModel, inst: &InstanceTrace, gb: &[Vec<f64>], t: usize) -> Result<Vec<f64>> {
    let back = model.layers()[t - 1].weight.tr_matvec(&gb[t - 1])?;
    Ok(back
        .iter()
        .zip(&inst.second[t - 1])
        .map(|(g, s)| g * s)
        .collect())
}

/// Exact `∇²_{b^t} ξ_i` for one instance, all layers (0-based by layer).
pub fn instance_bias_hessians(
    model: &FcnnModel,
    inst: &InstanceTrace,
    output_hessian: &DenseMatrix,
    bias_grads: &[Vec<f64>],
) -> Result<Vec<DenseMatrix>> {
    let k = model.depth();
    let mut blocks = vec![DenseMatrix::zeros(0, 0); k];
    let mut top = output_hessian.clone();
    top.symmetrize();
    blocks[k - 1] = top;
    for t in (2..=k).rev() {
        let d1 = &inst.first[t - 1];
        let outer = DenseMatrix::outer(d1, d1);
        let diag = instance_diag(model, inst, bias_grads, t)?;
        blocks[t - 2] = propagate(&blocks[t - 1], &model.layers()[t - 1].weight, &outer, Some(&diag))?;
    }
    Ok(blocks)
}

/// Batch mean of the exact per-instance bias Hessians `E_i[∇²_{b^t} ξ_i]`.
pub fn true_bias_hessian(model: &FcnnModel, batch: &BatchEvaluation) -> Result<Vec<DenseMatrix>> {
    check_batch(model, batch)?;
    let widths = model.widths();
    let mut acc: Vec<DenseMatrix> = widths[1..].iter().map(|&n| DenseMatrix::zeros(n, n)).collect();
    let inv = 1.0 / batch.trace.batch_size() as f64;
    for ((inst, out), gb) in batch
        .trace
        .instances
        .iter()
        .zip(&batch.outputs)
        .zip(&batch.bias_grads)
    {
        let blocks = instance_bias_hessians(model, inst, &out.hess, gb)?;
        for (a, b) in acc.iter_mut().zip(&blocks) {
            a.add_scaled(inv, b)?;
        }
    }
    Ok(acc)
}

/// `E[h^{t-1} h^{(t-1)ᵀ}]`, `E[h^{t-1}]` and, for `t >= 2`, `E[h' h'ᵀ]` and
/// the raw diagonal term, for every layer.
fn layer_factors(model: &FcnnModel, batch: &BatchEvaluation) -> Result<Vec<LayerCurvature>> {
    let widths = model.widths();
    let inv = 1.0 / batch.trace.batch_size() as f64;
    let mut out = Vec::with_capacity(model.depth());
    for t in 1..=model.depth() {
        let n_in = widths[t - 1];
        let mut ehh_t = DenseMatrix::zeros(n_in, n_in);
        let mut eh = vec![0.0; n_in];
        let mut ehh_t_prime = (t >= 2).then(|| DenseMatrix::zeros(n_in, n_in));
        let mut diag_term = (t >= 2).then(|| vec![0.0; n_in]);
        for (inst, gb) in batch.trace.instances.iter().zip(&batch.bias_grads) {
            let h = &inst.h[t - 1];
            ehh_t.add_outer(inv, h, h)?;
            crate::linalg::axpy(inv, h, &mut eh);
            if let Some(m) = ehh_t_prime.as_mut() {
                let d1 = &inst.first[t - 1];
                m.add_outer(inv, d1, d1)?;
            }
            if let Some(d) = diag_term.as_mut() {
                crate::linalg::axpy(inv, &instance_diag(model, inst, gb, t)?, d);
            }
        }
        ehh_t.symmetrize();
        if let Some(m) = ehh_t_prime.as_mut() {
            m.symmetrize();
        }
        out.push(LayerCurvature {
            hb: DenseMatrix::zeros(widths[t], widths[t]),
            ehh_t,
            eh,
            ehh_t_prime,
            diag_term,
        });
    }
    Ok(out)
}

fn mean_output_hessian(batch: &BatchEvaluation) -> Result<DenseMatrix> {
    let n = batch.outputs[0].hess.rows();
    let inv = 1.0 / batch.outputs.len() as f64;
    let mut top = DenseMatrix::zeros(n, n);
    for o in &batch.outputs {
        top.add_scaled(inv, &o.hess)?;
    }
    top.symmetrize();
    Ok(top)
}

fn treat_diag(raw: &[f64], treatment: DiagTerm) -> Option<Vec<f64>> {
    match treatment {
        DiagTerm::Keep => Some(raw.to_vec()),
        DiagTerm::Drop => None,
        // diagonal matrix: Pos-Eig acts elementwise
        DiagTerm::PosEig { gamma } => {
            let tol = default_eig_tol(raw);
            Some(raw.iter().map(|&v| pos_eig_scalar(v, gamma, tol)).collect())
        }
    }
}

/// Expectation-approximated recursion with explicit treatment of the top
/// block and of the diagonal term.
pub fn ea_recursion(
    model: &FcnnModel,
    batch: &BatchEvaluation,
    top: TopBlock,
    diag: DiagTerm,
) -> Result<Vec<LayerCurvature>> {
    check_batch(model, batch)?;
    if let TopBlock::PosEig { gamma } = top {
        check_gamma(gamma)?;
    }
    if let DiagTerm::PosEig { gamma } = diag {
        check_gamma(gamma)?;
    }
    let k = model.depth();
    let mut layers = layer_factors(model, batch)?;
    let raw_top = mean_output_hessian(batch)?;
    layers[k - 1].hb = match top {
        TopBlock::AsIs => raw_top,
        TopBlock::PosEig { gamma } => pos_eig(&raw_top, gamma, None)?,
    };
    for t in (2..=k).rev() {
        let lc = &layers[t - 1];
        let outer = lc.ehh_t_prime.as_ref().expect("t >= 2 has h' factors");
        let raw = lc.diag_term.as_ref().expect("t >= 2 has a diagonal term");
        let d = treat_diag(raw, diag);
        let below = propagate(&lc.hb, &model.layers()[t - 1].weight, outer, d.as_deref())?;
        layers[t - 2].hb = below;
    }
    Ok(layers)
}

/// Curvature blocks and weight-block factors for PCH, Gauss-Newton or Fisher.
pub fn ea_curvature(
    model: &FcnnModel,
    batch: &BatchEvaluation,
    kind: CurvatureKind,
) -> Result<Vec<LayerCurvature>> {
    kind.validate()?;
    match kind {
        CurvatureKind::TrueBlockDiag => Err(Error::config(
            "the true block-diagonal Hessian has no Kronecker factorization; use true_bias_hessian",
        )),
        CurvatureKind::Pch { gamma } => {
            ea_recursion(model, batch, TopBlock::PosEig { gamma }, DiagTerm::PosEig { gamma })
        }
        CurvatureKind::GaussNewton => ea_recursion(model, batch, TopBlock::AsIs, DiagTerm::Drop),
        CurvatureKind::Fisher => {
            check_batch(model, batch)?;
            let mut layers = layer_factors(model, batch)?;
            let inv = 1.0 / batch.trace.batch_size() as f64;
            for gb in &batch.bias_grads {
                for (lc, g) in layers.iter_mut().zip(gb) {
                    lc.hb.add_outer(inv, g, g)?;
                }
            }
            for lc in &mut layers {
                lc.hb.symmetrize();
            }
            Ok(layers)
        }
    }
}

/// Per-layer errors `||approx_t - |exact_t|||_F` and their joint Frobenius
/// norm over the block diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub per_layer: Vec<f64>,
    pub total: f64,
}

impl ErrorReport {
    pub fn from_layers(per_layer: Vec<f64>) -> Self {
        let total = per_layer.iter().map(|e| e * e).sum::<f64>().sqrt();
        Self { per_layer, total }
    }
}

/// `|A|` for every block.
pub fn abs_blocks(exact: &[DenseMatrix]) -> Result<Vec<DenseMatrix>> {
    exact.iter().map(abs_eig).collect()
}

/// Error against blocks that already had [`abs_blocks`] applied.
pub fn error_against_abs(approx: &[DenseMatrix], abs_exact: &[DenseMatrix]) -> Result<ErrorReport> {
    if approx.len() != abs_exact.len() {
        return Err(Error::dim(format!(
            "{} approximate blocks vs {} exact blocks",
            approx.len(),
            abs_exact.len()
        )));
    }
    let per_layer = approx
        .iter()
        .zip(abs_exact)
        .map(|(a, e)| Ok(a.sub(e)?.frobenius_norm()))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorReport::from_layers(per_layer))
}

pub fn layerwise_error(approx: &[DenseMatrix], exact: &[DenseMatrix]) -> Result<ErrorReport> {
    if approx.len() != exact.len() {
        return Err(Error::dim(format!(
            "{} approximate blocks vs {} exact blocks",
            approx.len(),
            exact.len()
        )));
    }
    error_against_abs(approx, &abs_blocks(exact)?)
}

/// Both sides of the covariance bound for layer `t` (`2 <= t <= k`):
///
/// ```text
/// lhs = ||Ele-Cov(W^tᵀ ∇²_{b^t}ξ_i W^t, h_i' h_i'ᵀ)||_F²
/// rhs = L⁴ Σ_{μν} Var([W^tᵀ ∇²_{b^t}ξ_i W^t]_{μν})
/// ```
///
/// with population (1/N) moments over the batch.
pub fn covariance_bound_check(
    model: &FcnnModel,
    batch: &BatchEvaluation,
    layer: usize,
    lipschitz: f64,
) -> Result<(f64, f64)> {
    check_batch(model, batch)?;
    let n_batch = batch.trace.batch_size();
    if n_batch < 2 {
        return Err(Error::config("covariance bound needs a batch of at least 2 instances"));
    }
    if layer < 2 || layer > model.depth() {
        return Err(Error::config(format!(
            "bound check layer must lie in 2..={}, got {layer}",
            model.depth()
        )));
    }
    if !lipschitz.is_finite() || lipschitz < model.activation().lipschitz() {
        return Err(Error::config(format!(
            "Lipschitz constant {lipschitz} is below the activation's {}",
            model.activation().lipschitz()
        )));
    }
    let w = &model.layers()[layer - 1].weight;
    let mut sandwiches = Vec::with_capacity(n_batch);
    let mut outers = Vec::with_capacity(n_batch);
    for ((inst, out), gb) in batch
        .trace
        .instances
        .iter()
        .zip(&batch.outputs)
        .zip(&batch.bias_grads)
    {
        let blocks = instance_bias_hessians(model, inst, &out.hess, gb)?;
        sandwiches.push(blocks[layer - 1].congruence(w)?);
        let d1 = &inst.first[layer - 1];
        outers.push(DenseMatrix::outer(d1, d1));
    }
    let n = w.cols();
    let inv = 1.0 / n_batch as f64;
    let (mut lhs, mut var_sum) = (0.0, 0.0);
    for mu in 0..n {
        for nu in 0..n {
            let ma = sandwiches.iter().map(|a| a[(mu, nu)]).sum::<f64>() * inv;
            let mp = outers.iter().map(|p| p[(mu, nu)]).sum::<f64>() * inv;
            let (mut cov, mut var) = (0.0, 0.0);
            for (a, p) in sandwiches.iter().zip(&outers) {
                let da = a[(mu, nu)] - ma;
                cov += da * (p[(mu, nu)] - mp);
                var += da * da;
            }
            cov *= inv;
            lhs += cov * cov;
            var_sum += var * inv;
        }
    }
    Ok((lhs, lipschitz.powi(4) * var_sum))
}
