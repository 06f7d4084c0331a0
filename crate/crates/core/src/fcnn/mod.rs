//! Fully-connected networks: parameters, forward traces with first and
//! second activation derivatives, and layer-wise backpropagation with the
//! bias and weight terms kept separate.
//!
//! Layers are numbered `1..=k` in documentation and stored 0-based, so
//! `model.layers()[t - 1]` holds `W^t`, `b^t`.

mod criterion;

pub use criterion::{one_hot, softmax, Criterion, CriterionEval};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Relu,
}

impl Activation {
    #[inline]
    pub fn value(self, z: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(z),
            Activation::Relu => z.max(0.0),
        }
    }

    /// `(σ(z), σ'(z), σ''(z))`
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64, f64) {
        match self {
            Activation::Sigmoid => {
                let s = sigmoid(z);
                let d = s * (1.0 - s);
                (s, d, d * (1.0 - 2.0 * s))
            }
            // σ'' is taken as zero everywhere, including the kink.
            Activation::Relu => {
                if z > 0.0 {
                    (z, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        }
    }

    /// Lipschitz constant of `σ` (bound on `|σ'|`).
    pub fn lipschitz(self) -> f64 {
        match self {
            Activation::Sigmoid => 0.25,
            Activation::Relu => 1.0,
        }
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `n_t x n_{t-1}`
    pub weight: DenseMatrix,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

/// `h^t = σ(W^t h^{t-1} + b^t)` for `t < k`; the last layer is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcnnModel {
    layers: Vec<Layer>,
    activation: Activation,
}

impl FcnnModel {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("a network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::dim(format!(
                    "layer {}: bias length {} does not match {} output units",
                    i + 1,
                    l.bias.len(),
                    l.fan_out()
                )));
            }
            if i > 0 && l.fan_in() != layers[i - 1].fan_out() {
                return Err(Error::dim(format!(
                    "layer {} takes {} inputs but layer {} produces {}",
                    i + 1,
                    l.fan_in(),
                    i,
                    layers[i - 1].fan_out()
                )));
            }
            if !l.weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::config(format!("layer {} has non-finite parameters", i + 1)));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Xavier-uniform weights on `±sqrt(6 / (n_in + n_out))`, zero biases.
    /// `widths` lists `n_0, ..., n_k`.
    pub fn xavier<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config(format!(
                "architecture needs at least two positive widths, got {widths:?}"
            )));
        }
        let layers = widths
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let bound = (6.0 / (n_in + n_out) as f64).sqrt();
                let data = (0..n_in * n_out)
                    .map(|_| rng.random_range(-bound..=bound))
                    .collect();
                Layer {
                    weight: DenseMatrix::from_row_major(n_out, n_in, data)
                        .expect("shape built from widths"),
                    bias: vec![0.0; n_out],
                }
            })
            .collect();
        Self::new(layers, activation)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access for parameter updates. Shapes must not be changed.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of layers `k`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// `n_0, ..., n_k`
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].fan_in())
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.rows() * (l.weight.cols() + 1)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.is_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    /// Output `h^k` for one input.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::dim(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let k = self.depth();
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = l.weight.matvec(&h)?;
            for (zi, bi) in z.iter_mut().zip(&l.bias) {
                *zi += bi;
            }
            if i + 1 < k {
                z.iter_mut().for_each(|v| *v = self.activation.value(*v));
            }
            h = z;
        }
        Ok(h)
    }
}

/// Forward quantities for one instance, indexed by layer `t = 0..=k`.
/// `first[0]`/`second[0]` are empty (the input has no pre-activation);
/// the affine output layer stores `σ' = 1`, `σ'' = 0`.
#[derive(Debug, Clone)]
pub struct InstanceTrace {
    pub h: Vec<Vec<f64>>,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl InstanceTrace {
    pub fn output(&self) -> &[f64] {
        self.h.last().expect("trace has at least the input layer")
    }
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub widths: Vec<usize>,
    pub instances: Vec<InstanceTrace>,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.instances.len()
    }

    pub(crate) fn check_model(&self, model: &FcnnModel) -> Result<()> {
        if self.widths != model.widths() {
            return Err(Error::dim(format!(
                "trace was recorded for widths {:?}, model has {:?}",
                self.widths,
                model.widths()
            )));
        }
        if self.instances.is_empty() {
            return Err(Error::config("trace holds no instances"));
        }
        Ok(())
    }
}

pub fn forward<X: AsRef<[f64]>>(model: &FcnnModel, inputs: &[X]) -> Result<ForwardTrace> {
    let k = model.depth();
    let act = model.activation();
    let instances = inputs
        .iter()
        .map(|x| {
            let x = x.as_ref();
            if x.len() != model.input_dim() {
                return Err(Error::dim(format!(
                    "input has {} features, network expects {}",
                    x.len(),
                    model.input_dim()
                )));
            }
            let mut h = Vec::with_capacity(k + 1);
            let mut first = Vec::with_capacity(k + 1);
            let mut second = Vec::with_capacity(k + 1);
            h.push(x.to_vec());
            first.push(Vec::new());
            second.push(Vec::new());
            for (i, l) in model.layers().iter().enumerate() {
                let mut z = l.weight.matvec(&h[i])?;
                for (zi, bi) in z.iter_mut().zip(&l.bias) {
                    *zi += bi;
                }
                if i + 1 < k {
                    let n = z.len();
                    let (mut d1, mut d2) = (Vec::with_capacity(n), Vec::with_capacity(n));
                    for v in z.iter_mut() {
                        let (s, s1, s2) = act.eval(*v);
                        *v = s;
                        d1.push(s1);
                        d2.push(s2);
                    }
                    first.push(d1);
                    second.push(d2);
                } else {
                    first.push(vec![1.0; z.len()]);
                    second.push(vec![0.0; z.len()]);
                }
                h.push(z);
            }
            Ok(InstanceTrace { h, first, second })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardTrace {
        widths: model.widths(),
        instances,
    })
}

/// Per-layer gradients, `bias[t-1] = ∇_{b^t} ξ`, `weight[t-1] = ∇_{W^t} ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub bias: Vec<Vec<f64>>,
    pub weight: Vec<DenseMatrix>,
    /// True when the gradients are instance means over a batch.
    pub batch_mean: bool,
}

impl LayerGradients {
    pub fn zeros_like(model: &FcnnModel) -> Self {
        Self {
            bias: model.layers().iter().map(|l| vec![0.0; l.fan_out()]).collect(),
            weight: model
                .layers()
                .iter()
                .map(|l| DenseMatrix::zeros(l.fan_out(), l.fan_in()))
                .collect(),
            batch_mean: false,
        }
    }

    /// `sum_t ||∇_{W^t}||² + ||∇_{b^t}||²`
    pub fn squared_norm(&self) -> f64 {
        let w: f64 = self.weight.iter().map(|m| m.frobenius_norm().powi(2)).sum();
        let b: f64 = self.bias.iter().flatten().map(|v| v * v).sum();
        w + b
    }

    /// Flattened `(Vec(W^1), b^1, ..., Vec(W^k), b^k)`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weight.iter().zip(&self.bias) {
            out.extend(w.to_vec_colmajor());
            out.extend_from_slice(b);
        }
        out
    }
}

/// `∇_{b^t} ξ` for every layer of one instance, from `∇_{h^k} ξ`.
pub fn bias_backprop_instance(
    model: &FcnnModel,
    inst: &InstanceTrace,
    grad_out: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let k = model.depth();
    if grad_out.len() != model.output_dim() {
        return Err(Error::dim(format!(
            "output gradient has length {}, network output width is {}",
            grad_out.len(),
            model.output_dim()
        )));
    }
    if inst.h.len() != k + 1 {
        return Err(Error::dim("instance trace depth does not match model"));
    }
    let mut grads = vec![Vec::new(); k];
    grads[k - 1] = grad_out.to_vec();
    for t in (2..=k).rev() {
        let back = model.layers()[t - 1].weight.tr_matvec(&grads[t - 1])?;
        grads[t - 2] = back
            .iter()
            .zip(&inst.first[t - 1])
            .map(|(g, d)| g * d)
            .collect();
    }
    Ok(grads)
}

/// Gradients for a single instance. `∇_{W^t} ξ` is the outer product
/// `∇_{b^t} ξ · h^{(t-1)ᵀ}`.
pub fn backprop_instance(
    model: &FcnnModel,
    inst: &InstanceTrace,
    grad_out: &[f64],
) -> Result<LayerGradients> {
    let bias = bias_backprop_instance(model, inst, grad_out)?;
    let weight = bias
        .iter()
        .enumerate()
        .map(|(i, gb)| DenseMatrix::outer(gb, &inst.h[i]))
        .collect();
    Ok(LayerGradients {
        bias,
        weight,
        batch_mean: false,
    })
}

/// Batch-mean gradients, summed in instance order.
pub fn backprop<G: AsRef<[f64]>>(
    model: &FcnnModel,
    trace: &ForwardTrace,
    grad_out: &[G],
) -> Result<LayerGradients> {
    trace.check_model(model)?;
    if grad_out.len() != trace.batch_size() {
        return Err(Error::dim(format!(
            "{} output gradients for a batch of {}",
            grad_out.len(),
            trace.batch_size()
        )));
    }
    let per_instance = trace
        .instances
        .iter()
        .zip(grad_out)
        .map(|(inst, g)| bias_backprop_instance(model, inst, g.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_gradients(model, trace, &per_instance))
}

/// Batch-mean gradients from already computed per-instance bias gradients.
pub fn mean_gradients(
    model: &FcnnModel,
    trace: &ForwardTrace,
    per_instance_bias: &[Vec<Vec<f64>>],
) -> LayerGradients {
    let mut out = LayerGradients::zeros_like(model);
    let inv = 1.0 / per_instance_bias.len() as f64;
    for (inst, gb) in trace.instances.iter().zip(per_instance_bias) {
        for (t, g) in gb.iter().enumerate() {
            crate::linalg::axpy(inv, g, &mut out.bias[t]);
            out.weight[t]
                .add_outer(inv, g, &inst.h[t])
                .expect("shapes come from the same model");
        }
    }
    out.batch_mean = true;
    out
}

/// Everything a training step needs from one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchEvaluation {
    pub trace: ForwardTrace,
    pub mean_loss: f64,
    /// `∇_{h^k} ξ_i` and `∇²_{h^k} ξ_i` per instance.
    pub outputs: Vec<CriterionEval>,
    /// `∇_{b^t} ξ_i` per instance and layer.
    pub bias_grads: Vec<Vec<Vec<f64>>>,
    pub mean_grads: LayerGradients,
}

pub fn evaluate_batch<X: AsRef<[f64]>>(
    model: &FcnnModel,
    criterion: &Criterion,
    inputs: &[X],
    targets: &[usize],
) -> Result<BatchEvaluation> {
    if inputs.len() != targets.len() {
        return Err(Error::dim(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let trace = forward(model, inputs)?;
    let outputs = trace
        .instances
        .iter()
        .zip(targets)
        .map(|(inst, &c)| criterion.eval_class(inst.output(), c))
        .collect::<Result<Vec<_>>>()?;
    let bias_grads = trace
        .instances
        .iter()
        .zip(&outputs)
        .map(|(inst, o)| bias_backprop_instance(model, inst, &o.grad))
        .collect::<Result<Vec<_>>>()?;
    let mean_loss = outputs.iter().map(|o| o.loss).sum::<f64>() / outputs.len() as f64;
    let mean_grads = mean_gradients(model, &trace, &bias_grads);
    Ok(BatchEvaluation {
        trace,
        mean_loss,
        outputs,
        bias_grads,
        mean_grads,
    })
}

/// Mean criterion value over a set of instances.
pub fn mean_loss<X: AsRef<[f64]>>(
    model: &FcnnModel,
    criterion: &Criterion,
    inputs: &[X],
    targets: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for (x, &c) in inputs.iter().zip(targets) {
        total += criterion.loss_class(&model.predict(x.as_ref())?, c);
    }
    Ok(total / inputs.len().max(1) as f64)
}

/// Fraction of instances whose arg-max output matches the target.
pub fn accuracy<X: AsRef<[f64]>>(model: &FcnnModel, inputs: &[X], targets: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (x, &c) in inputs.iter().zip(targets) {
        let out = model.predict(x.as_ref())?;
        let arg = out
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        hits += usize::from(arg == c);
    }
    Ok(hits as f64 / inputs.len() as f64)
}
