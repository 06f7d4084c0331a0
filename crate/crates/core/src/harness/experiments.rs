use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::curvature::{abs_blocks, covariance_bound_check, ea_curvature, error_against_abs, true_bias_hessian, CurvatureKind};
use crate::error::{Error, Result};
use crate::fcnn::{evaluate_batch, FcnnModel};
use crate::harness::ExperimentSpec;
use crate::trainer::{train, Stepper, TrainConfig};

/// Column order of the error table.
pub const COMPARED_KINDS: [CurvatureKind; 4] = [
    CurvatureKind::Fisher,
    CurvatureKind::GaussNewton,
    CurvatureKind::PCH1,
    CurvatureKind::PCH2,
];

/// Layer-wise errors against the absolute-eigenvalue true blocks, averaged
/// over the comparison trajectory. `None` marks an approximation that was
/// not evaluated (Gauss-Newton under a non-convex criterion).
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureComparison {
    pub kinds: Vec<CurvatureKind>,
    /// `per_layer[kind][layer]`
    pub per_layer: Vec<Option<Vec<f64>>>,
    /// `sqrt(Σ_t per_layer[t]²)`
    pub totals: Vec<Option<f64>>,
    pub steps: usize,
}

impl CurvatureComparison {
    pub fn column(&self, kind: CurvatureKind) -> Option<(&[f64], f64)> {
        let i = self.kinds.iter().position(|k| *k == kind)?;
        Some((self.per_layer[i].as_deref()?, self.totals[i]?))
    }

    /// One row per layer plus a `Total` row; absent columns hold `-`.
    pub fn to_csv(&self) -> String {
        let depth = self
            .per_layer
            .iter()
            .flatten()
            .map(Vec::len)
            .next()
            .unwrap_or(0);
        let mut out = String::from("layer");
        for k in &self.kinds {
            out.push(',');
            out.push_str(&k.label());
        }
        out.push('\n');
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:?}"));
        for t in 0..depth {
            out.push_str(&format!("Layer-{}", t + 1));
            for col in &self.per_layer {
                out.push(',');
                out.push_str(&cell(col.as_ref().map(|c| c[t])));
            }
            out.push('\n');
        }
        out.push_str("Total");
        for total in &self.totals {
            out.push(',');
            out.push_str(&cell(*total));
        }
        out.push('\n');
        out
    }
}

fn pretrained(spec: &ExperimentSpec, dataset: &crate::data::Dataset) -> Result<FcnnModel> {
    let model = spec.init_model()?;
    if spec.pretrain_epochs == 0 {
        return Ok(model);
    }
    let cfg = TrainConfig {
        epochs: spec.pretrain_epochs,
        record_wall_time: false,
        ..spec.train_config()
    };
    Ok(train(model, dataset, &cfg)?.model)
}

/// Walks `comparison_steps` optimizer steps from the (optionally pretrained)
/// initial model; at every parameter state the current mini-batch yields the
/// true bias blocks and each approximation.
pub fn compare_curvatures(spec: &ExperimentSpec) -> Result<CurvatureComparison> {
    spec.validate()?;
    let dataset = spec.dataset()?;
    let mut model = pretrained(spec, &dataset)?;
    let depth = model.depth();
    let cfg = TrainConfig {
        record_wall_time: false,
        ..spec.train_config()
    };
    let mut stepper = Stepper::new(&model, cfg)?;
    let convex = spec.criterion.is_convex();
    let kinds = COMPARED_KINDS.to_vec();
    let mut sums: Vec<Option<Vec<f64>>> = kinds
        .iter()
        .map(|k| (convex || *k != CurvatureKind::GaussNewton).then(|| vec![0.0; depth]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(2);
    let mut order = dataset.train.clone();
    order.shuffle(&mut rng);
    let bs = spec.batch_size.min(order.len());
    let mut cursor = 0;
    for _ in 0..spec.comparison_steps {
        if cursor + bs > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let (xs, ys) = dataset.subset(&order[cursor..cursor + bs]);
        cursor += bs;

        let batch = evaluate_batch(&model, &spec.criterion, &xs, &ys)?;
        let abs_exact = abs_blocks(&true_bias_hessian(&model, &batch)?)?;
        for (kind, acc) in kinds.iter().zip(sums.iter_mut()) {
            let Some(acc) = acc else { continue };
            let approx: Vec<_> = ea_curvature(&model, &batch, *kind)?
                .into_iter()
                .map(|lc| lc.hb)
                .collect();
            let report = error_against_abs(&approx, &abs_exact)?;
            for (a, e) in acc.iter_mut().zip(&report.per_layer) {
                *a += e;
            }
        }
        stepper.step(&mut model, &xs, &ys)?;
        if !model.is_finite() {
            return Err(Error::Diverged {
                epoch: 0,
                step: cursor / bs,
                loss: f64::NAN,
            });
        }
    }

    let s = spec.comparison_steps as f64;
    let per_layer: Vec<Option<Vec<f64>>> = sums
        .into_iter()
        .map(|col| col.map(|v| v.into_iter().map(|e| e / s).collect()))
        .collect();
    let totals = per_layer
        .iter()
        .map(|col| col.as_ref().map(|v| v.iter().map(|e| e * e).sum::<f64>().sqrt()))
        .collect();
    Ok(CurvatureComparison {
        kinds,
        per_layer,
        totals,
        steps: spec.comparison_steps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckOutcome {
    pub layer: usize,
    pub lipschitz: f64,
    /// `(lhs, rhs)` per trial.
    pub trials: Vec<(f64, f64)>,
}

impl BoundCheckOutcome {
    pub fn passed(&self) -> bool {
        self.trials.iter().all(|(l, r)| l <= r)
    }
}

/// Evaluates the covariance bound on seeded random mini-batches of the
/// training split.
pub fn run_bound_check(spec: &ExperimentSpec) -> Result<BoundCheckOutcome> {
    spec.validate()?;
    let bc = spec.bound_check.unwrap_or_default();
    if bc.trials == 0 {
        return Err(Error::config("bound check needs at least one trial"));
    }
    let dataset = spec.dataset()?;
    let model = pretrained(spec, &dataset)?;
    let lipschitz = bc.lipschitz.unwrap_or_else(|| model.activation().lipschitz());
    if bc.batch_size > dataset.train.len() {
        return Err(Error::config(format!(
            "bound check batch of {} exceeds the {} training instances",
            bc.batch_size,
            dataset.train.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(3);
    let mut trials = Vec::with_capacity(bc.trials);
    for _ in 0..bc.trials {
        let pick: Vec<usize> = dataset
            .train
            .choose_multiple(&mut rng, bc.batch_size)
            .copied()
            .collect();
        let (xs, ys) = dataset.subset(&pick);
        let batch = evaluate_batch(&model, &spec.criterion, &xs, &ys)?;
        trials.push(covariance_bound_check(&model, &batch, bc.layer, lipschitz)?);
    }
    Ok(BoundCheckOutcome {
        layer: bc.layer,
        lipschitz,
        trials,
    })
}
