use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curvature::{ea_curvature, CurvatureKind};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fcnn::{accuracy, evaluate_batch, mean_loss, Criterion, FcnnModel};
use crate::linalg::{axpy, DenseMatrix};
use crate::solvers::{ea_cg_direction, kfi_direction, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    EaCg,
    Kfi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Optimizer {
    SgdMomentum,
    SecondOrder {
        curvature: CurvatureKind,
        solver: SolverKind,
        #[serde(default)]
        solver_cfg: SolverConfig,
    },
}

impl Optimizer {
    pub fn label(&self) -> String {
        match self {
            Optimizer::SgdMomentum => "SGD".into(),
            Optimizer::SecondOrder { curvature, solver, .. } => {
                let s = match solver {
                    SolverKind::EaCg => "EA-CG",
                    SolverKind::Kfi => "KFI",
                };
                format!("{}+{s}", curvature.label())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Used by the SGD baseline only.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    pub criterion: Criterion,
    pub optimizer: Optimizer,
    /// When false every `wall_s` is reported as 0 so that metrics are
    /// byte-for-byte reproducible.
    #[serde(default = "default_true")]
    pub record_wall_time: bool,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        self.criterion.validate()?;
        if let Optimizer::SecondOrder { curvature, solver_cfg, .. } = &self.optimizer {
            if *curvature == CurvatureKind::TrueBlockDiag {
                return Err(Error::config("training with the true block-diagonal Hessian is not supported"));
            }
            curvature.validate()?;
            solver_cfg.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub test_acc: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Epoch 0 holds the metrics of the initial model.
    pub epochs: Vec<EpochMetrics>,
    pub model: FcnnModel,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |m| m.loss)
    }

    pub fn final_test_acc(&self) -> f64 {
        self.epochs.last().map_or(0.0, |m| m.test_acc)
    }

    /// One JSON object per line.
    pub fn to_json_lines(&self) -> String {
        self.epochs
            .iter()
            .map(|m| serde_json::to_string(m).expect("metrics serialize") + "\n")
            .collect()
    }
}

/// Mutable optimizer state across steps.
pub struct Stepper {
    cfg: TrainConfig,
    velocity_w: Vec<DenseMatrix>,
    velocity_b: Vec<Vec<f64>>,
}

impl Stepper {
    pub fn new(model: &FcnnModel, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            velocity_w: model
                .layers()
                .iter()
                .map(|l| DenseMatrix::zeros(l.fan_out(), l.fan_in()))
                .collect(),
            velocity_b: model.layers().iter().map(|l| vec![0.0; l.fan_out()]).collect(),
        })
    }

    /// One parameter update on a mini-batch; returns the batch loss before
    /// the update.
    pub fn step<X: AsRef<[f64]>>(&mut self, model: &mut FcnnModel, inputs: &[X], targets: &[usize]) -> Result<f64> {
        let eta = self.cfg.learning_rate;
        let batch = evaluate_batch(model, &self.cfg.criterion, inputs, targets)?;
        match &self.cfg.optimizer {
            Optimizer::SgdMomentum => {
                let mu = self.cfg.momentum;
                let g = &batch.mean_grads;
                for (t, layer) in model.layers_mut().iter_mut().enumerate() {
                    let vw = &mut self.velocity_w[t];
                    vw.scale(mu);
                    vw.add_scaled(-eta, &g.weight[t])?;
                    layer.weight.add_scaled(1.0, vw)?;
                    let vb = &mut self.velocity_b[t];
                    vb.iter_mut().for_each(|v| *v *= mu);
                    axpy(-eta, &g.bias[t], vb);
                    axpy(1.0, vb, &mut layer.bias);
                }
            }
            Optimizer::SecondOrder { curvature, solver, solver_cfg } => {
                let curv = ea_curvature(model, &batch, *curvature)?;
                let d = match solver {
                    SolverKind::EaCg => ea_cg_direction(&curv, &batch.mean_grads, solver_cfg)?,
                    SolverKind::Kfi => kfi_direction(&curv, &batch.mean_grads, solver_cfg)?,
                };
                d.apply_to(model, eta)?;
            }
        }
        Ok(batch.mean_loss)
    }
}

fn epoch_metrics(
    model: &FcnnModel,
    criterion: &Criterion,
    dataset: &Dataset,
    epoch: usize,
    wall_s: f64,
) -> Result<EpochMetrics> {
    let (xs, ys) = dataset.subset(&dataset.train);
    let loss = mean_loss(model, criterion, &xs, &ys)?;
    let (tx, ty) = dataset.subset(&dataset.test);
    let test_acc = accuracy(model, &tx, &ty)?;
    Ok(EpochMetrics {
        epoch,
        loss,
        test_acc,
        wall_s,
    })
}

fn check_dims(model: &FcnnModel, dataset: &Dataset) -> Result<()> {
    if dataset.train.is_empty() {
        return Err(Error::config("training split is empty"));
    }
    if model.input_dim() != dataset.dim() {
        return Err(Error::dim(format!(
            "network takes {} inputs, dataset has {} features",
            model.input_dim(),
            dataset.dim()
        )));
    }
    if model.output_dim() != dataset.num_classes {
        return Err(Error::dim(format!(
            "network has {} outputs, dataset has {} classes",
            model.output_dim(),
            dataset.num_classes
        )));
    }
    Ok(())
}

/// Mini-batch training with an epoch-wise seeded shuffle of the training
/// split.
pub fn train(mut model: FcnnModel, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_dims(&model, dataset)?;
    let start = Instant::now();
    let clock = |s: &Instant| if cfg.record_wall_time { s.elapsed().as_secs_f64() } else { 0.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stepper = Stepper::new(&model, *cfg)?;
    let mut order = dataset.train.clone();
    let mut epochs = vec![epoch_metrics(&model, &cfg.criterion, dataset, 0, 0.0)?];
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (xs, ys) = dataset.subset(chunk);
            let loss = stepper.step(&mut model, &xs, &ys).map_err(|e| match e {
                Error::Breakdown { context, iteration, reason } => Error::Breakdown {
                    context: format!("epoch {epoch}, step {step}: {context}"),
                    iteration,
                    reason,
                },
                other => other,
            })?;
            if !loss.is_finite() || !model.is_finite() {
                return Err(Error::Diverged { epoch, step, loss });
            }
        }
        let m = epoch_metrics(&model, &cfg.criterion, dataset, epoch, clock(&start))?;
        if !m.loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                step: order.len().div_ceil(cfg.batch_size),
                loss: m.loss,
            });
        }
        epochs.push(m);
    }
    Ok(TrainReport { epochs, model })
}

/// Hyper-parameter axes. Solver axes are ignored (collapsed to one run) for
/// the SGD baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub learning_rates: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    #[serde(default)]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub max_cg: Vec<usize>,
    #[serde(default)]
    pub eps_cg: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub config: TrainConfig,
    pub report: TrainReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub runs: Vec<GridRun>,
    pub best_by_loss: usize,
    pub best_by_accuracy: usize,
}

/// Every grid point as a concrete configuration, learning rate outermost.
pub fn grid_configs(base: &TrainConfig, grid: &Grid) -> Result<Vec<TrainConfig>> {
    if grid.learning_rates.is_empty() || grid.batch_sizes.is_empty() {
        return Err(Error::config("grid needs at least one learning rate and one batch size"));
    }
    let second_order = matches!(base.optimizer, Optimizer::SecondOrder { .. });
    let solver_axes = |v: &[f64], d: f64| if second_order && !v.is_empty() { v.to_vec() } else { vec![d] };
    let base_solver = match base.optimizer {
        Optimizer::SecondOrder { solver_cfg, .. } => solver_cfg,
        Optimizer::SgdMomentum => SolverConfig::default(),
    };
    let alphas = solver_axes(&grid.alphas, base_solver.alpha);
    let eps = solver_axes(&grid.eps_cg, base_solver.eps_cg);
    let max_cg = if second_order && !grid.max_cg.is_empty() {
        grid.max_cg.clone()
    } else {
        vec![base_solver.max_cg]
    };

    let mut out = Vec::new();
    for &lr in &grid.learning_rates {
        for &bs in &grid.batch_sizes {
            for &alpha in &alphas {
                for &mc in &max_cg {
                    for &e in &eps {
                        let mut cfg = *base;
                        cfg.learning_rate = lr;
                        cfg.batch_size = bs;
                        if let Optimizer::SecondOrder { solver_cfg, .. } = &mut cfg.optimizer {
                            solver_cfg.alpha = alpha;
                            solver_cfg.max_cg = mc;
                            solver_cfg.eps_cg = e;
                        }
                        cfg.validate()?;
                        out.push(cfg);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Runs the cartesian product of `grid` from the same initial model and seed.
/// Runs execute in parallel; results keep grid order.
pub fn grid_search(init: &FcnnModel, dataset: &Dataset, base: &TrainConfig, grid: &Grid) -> Result<GridResult> {
    let configs = grid_configs(base, grid)?;
    let runs = configs
        .into_par_iter()
        .map(|config| {
            let report = train(init.clone(), dataset, &config)?;
            Ok(GridRun { config, report })
        })
        .collect::<Result<Vec<_>>>()?;
    let best_by_loss = (0..runs.len())
        .min_by(|&a, &b| runs[a].report.final_loss().total_cmp(&runs[b].report.final_loss()))
        .expect("grid is non-empty");
    let best_by_accuracy = (0..runs.len())
        .max_by(|&a, &b| {
            runs[a]
                .report
                .final_test_acc()
                .total_cmp(&runs[b].report.final_test_acc())
                .then(b.cmp(&a))
        })
        .expect("grid is non-empty");
    Ok(GridResult {
        runs,
        best_by_loss,
        best_by_accuracy,
    })
}
