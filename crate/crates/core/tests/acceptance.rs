//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion fails.

mod common;

use std::alloc::{GlobalAlloc, Layout, System};
use std::cell::Cell;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use common::*;
use eacg::curvature::{
    covariance_bound_check, ea_curvature, layerwise_error, true_bias_hessian, CurvatureKind, LayerCurvature,
};
use eacg::fcnn::{evaluate_batch, Activation, Criterion, LayerGradients};
use eacg::harness::{compare_curvatures, ExperimentSpec, DESK_ARCHITECTURE};
use eacg::linalg::{kron, DenseMatrix};
use eacg::solvers::{ea_cg_direction, kfi_direction, HvpMode, PiPolicy, SolverConfig};
use eacg::trainer::{grid_search, Grid};
use rand::Rng;

// ---------------------------------------------------------------------------
// Allocation tracker: records the largest single allocation made by the
// current thread while tracking is switched on.

struct Tracker;

thread_local! {
    static TRACKING: Cell<bool> = const { Cell::new(false) };
}
static PEAK_ALLOC: AtomicUsize = AtomicUsize::new(0);

fn note(size: usize) {
    if TRACKING.try_with(Cell::get).unwrap_or(false) {
        PEAK_ALLOC.fetch_max(size, Ordering::Relaxed);
    }
}

unsafe impl GlobalAlloc for Tracker {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        note(layout.size());
        System.alloc(layout)
    }
    unsafe fn alloc_zeroed(&self, layout: Layout) -> *mut u8 {
        note(layout.size());
        System.alloc_zeroed(layout)
    }
    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        note(new_size);
        System.realloc(ptr, layout, new_size)
    }
    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        System.dealloc(ptr, layout)
    }
}

#[global_allocator]
static GLOBAL: Tracker = Tracker;

/// Largest single allocation (bytes) made by `f` on this thread.
fn peak_allocation<T>(f: impl FnOnce() -> T) -> (T, usize) {
    PEAK_ALLOC.store(0, Ordering::Relaxed);
    TRACKING.with(|t| t.set(true));
    let out = f();
    TRACKING.with(|t| t.set(false));
    (out, PEAK_ALLOC.load(Ordering::Relaxed))
}

// ---------------------------------------------------------------------------

type Outcome = Result<String, String>;
type NamedCheck = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let e = start.elapsed();
    ensure(e < limit, || format!("took {e:?}, limit {limit:?}"))
}

/// Random net whose hidden pre-activations keep clear of the ReLU kink by
/// `margin` on the given batch.
fn smooth_fixture(
    rng: &mut impl Rng,
    max_depth: usize,
    act: Activation,
    batch: usize,
    margin: f64,
) -> (eacg::fcnn::FcnnModel, Vec<Vec<f64>>, Vec<usize>) {
    loop {
        let widths = random_widths(rng, max_depth, 8);
        let model = random_model(rng, &widths, act, 1.0);
        let (xs, ys) = random_batch(rng, batch, widths[0], *widths.last().unwrap());
        if act == Activation::Sigmoid || min_hidden_preactivation(&model, &xs) > margin {
            return (model, xs, ys);
        }
    }
}

fn all_params(model: &eacg::fcnn::FcnnModel) -> Vec<Param> {
    let mut out = Vec::new();
    for (layer, l) in model.layers().iter().enumerate() {
        for row in 0..l.fan_out() {
            for col in 0..l.fan_in() {
                out.push(Param::Weight { layer, row, col });
            }
            out.push(Param::Bias { layer, index: row });
        }
    }
    out
}

fn analytic(grads: &LayerGradients, p: Param) -> f64 {
    match p {
        Param::Weight { layer, row, col } => grads.weight[layer][(row, col)],
        Param::Bias { layer, index } => grads.bias[layer][index],
    }
}

fn criterion_1_gradient_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(101);
    let h = 1e-4;
    let mut checked = 0;
    let mut worst = 0.0f64;
    for net in 0..50 {
        let act = if net % 2 == 0 { Activation::Sigmoid } else { Activation::Relu };
        let (model, xs, ys) = smooth_fixture(&mut rng, 4, act, 3, 1e-2);
        for crit in [Criterion::CrossEntropySoftmax, Criterion::sigmoid_gate_default()] {
            let grads = evaluate_batch(&model, &crit, &xs, &ys).map_err(|e| e.to_string())?.mean_grads;
            for p in all_params(&model) {
                let g = analytic(&grads, p);
                let fd = fd_loss_gradient(&model, &crit, &xs, &ys, p, h);
                let tol = (1e-6 * fd.abs()).max(1e-9);
                worst = worst.max((g - fd).abs() / tol);
                ensure((g - fd).abs() <= tol, || {
                    format!("net {net} {crit:?} {p:?}: backprop {g:e} vs finite difference {fd:e}")
                })?;
                checked += 1;
            }
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("{checked} partials, worst error/tolerance {worst:.2e}"))
}

fn criterion_2_hessian_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = rng(202);
    let h = 1e-4;
    let mut worst = 0.0f64;
    for net in 0..20 {
        let act = if net % 2 == 0 { Activation::Sigmoid } else { Activation::Relu };
        let (model, xs, ys) = smooth_fixture(&mut rng, 4, act, 3, 1e-2);
        let crit = if net % 4 < 2 {
            Criterion::CrossEntropySoftmax
        } else {
            Criterion::sigmoid_gate_default()
        };
        let batch = evaluate_batch(&model, &crit, &xs, &ys).map_err(|e| e.to_string())?;
        let blocks = true_bias_hessian(&model, &batch).map_err(|e| e.to_string())?;
        for (t, block) in blocks.iter().enumerate() {
            for j in 0..block.cols() {
                let fd = richardson_vec(
                    |d| {
                        let m = perturbed(&model, Param::Bias { layer: t, index: j }, d);
                        evaluate_batch(&m, &crit, &xs, &ys).unwrap().mean_grads.bias[t].clone()
                    },
                    h,
                );
                for (i, &f) in fd.iter().enumerate() {
                    let got = block[(i, j)];
                    let tol = (1e-5 * f.abs()).max(1e-9);
                    worst = worst.max((got - f).abs() / tol);
                    ensure((got - f).abs() <= tol, || {
                        format!("net {net} layer {} entry ({i},{j}): recursion {got:e} vs finite difference {f:e}", t + 1)
                    })?;
                }
            }
        }
    }
    within(start, Duration::from_secs(60))?;
    Ok(format!("20 nets, worst error/tolerance {worst:.2e}"))
}

fn criterion_3_psd_suite() -> Outcome {
    let mut rng = rng(303);
    let mut worst = f64::INFINITY;
    let mut gn_negative = 0;
    for net in 0..100 {
        let act = if net % 2 == 0 { Activation::Sigmoid } else { Activation::Relu };
        let widths = random_widths(&mut rng, 4, 8);
        let model = random_model(&mut rng, &widths, act, 1.0);
        let (xs, ys) = random_batch(&mut rng, 4, widths[0], *widths.last().unwrap());
        for crit in [Criterion::CrossEntropySoftmax, Criterion::sigmoid_gate_default()] {
            let batch = evaluate_batch(&model, &crit, &xs, &ys).map_err(|e| e.to_string())?;
            for kind in [CurvatureKind::PCH1, CurvatureKind::PCH2, CurvatureKind::Fisher] {
                for (t, lc) in ea_curvature(&model, &batch, kind).map_err(|e| e.to_string())?.iter().enumerate() {
                    let min = na_min_eigenvalue(&lc.hb);
                    worst = worst.min(min);
                    ensure(min >= -1e-8, || {
                        format!("net {net} {} layer {}: min eigenvalue {min:e}", kind.label(), t + 1)
                    })?;
                }
            }
            if !crit.is_convex() {
                let gn = ea_curvature(&model, &batch, CurvatureKind::GaussNewton).map_err(|e| e.to_string())?;
                if gn.iter().any(|lc| na_min_eigenvalue(&lc.hb) < -1e-8) {
                    gn_negative += 1;
                }
            }
        }
    }
    ensure(gn_negative >= 1, || "Gauss-Newton was PSD on every non-convex case".into())?;
    Ok(format!(
        "min PCH/Fisher eigenvalue {worst:e}; Gauss-Newton indefinite in {gn_negative}/100 non-convex cases"
    ))
}

fn criterion_4_output_layer_exact() -> Outcome {
    let mut rng = rng(404);
    let mut worst = 0.0f64;
    for net in 0..30 {
        let widths = if net == 0 { DESK_ARCHITECTURE.to_vec() } else { random_widths(&mut rng, 4, 8) };
        let act = if net % 2 == 0 { Activation::Sigmoid } else { Activation::Relu };
        let model = random_model(&mut rng, &widths, act, 1.0);
        let (xs, ys) = random_batch(&mut rng, 6, widths[0], *widths.last().unwrap());
        let batch = evaluate_batch(&model, &Criterion::CrossEntropySoftmax, &xs, &ys).map_err(|e| e.to_string())?;
        let exact = true_bias_hessian(&model, &batch).map_err(|e| e.to_string())?;
        for kind in [CurvatureKind::GaussNewton, CurvatureKind::PCH1, CurvatureKind::PCH2] {
            let approx: Vec<_> = ea_curvature(&model, &batch, kind)
                .map_err(|e| e.to_string())?
                .into_iter()
                .map(|lc| lc.hb)
                .collect();
            let err = *layerwise_error(&approx, &exact).map_err(|e| e.to_string())?.per_layer.last().unwrap();
            worst = worst.max(err);
            ensure(err <= 1e-10, || format!("net {net} {}: output-layer error {err:e}", kind.label()))?;
        }
    }
    Ok(format!("30 nets, worst output-layer error {worst:e}"))
}

fn criterion_5_table_ordering() -> Outcome {
    let mut pch = Vec::new();
    let mut fisher = Vec::new();
    for seed in 1..=5 {
        let spec = ExperimentSpec::from_json(&format!(
            r#"{{"architecture": {:?}, "activation": "sigmoid", "learning_rate": 0.05, "batch_size": 20,
                "pretrain_epochs": 3, "comparison_steps": 10, "seed": {seed}}}"#,
            DESK_ARCHITECTURE
        ))
        .map_err(|e| e.to_string())?;
        let table = compare_curvatures(&spec).map_err(|e| e.to_string())?;
        pch.push(table.column(CurvatureKind::PCH1).ok_or("PCH-1 column missing")?.1);
        fisher.push(table.column(CurvatureKind::Fisher).ok_or("Fisher column missing")?.1);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (mp, mf) = (median(&mut pch), median(&mut fisher));
    ensure(mp < mf, || format!("median Total PCH-1 {mp:.4e} >= Fisher {mf:.4e}"))?;
    Ok(format!("median Total PCH-1 {mp:.4e} < Fisher {mf:.4e}"))
}

/// Dense reference for one layer's damped systems.
fn dense_ea_solve(lc: &LayerCurvature, gw: &DenseMatrix, gb: &[f64], alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let mut big = kron(&lc.ehh_t, &lc.hb).scaled(1.0 - alpha);
    big.add_to_diag(alpha);
    let rhs: Vec<f64> = gw.to_vec_colmajor().iter().map(|v| -v).collect();
    let dw = na_solve(&big, &rhs);
    let mut small = lc.hb.scaled(1.0 - alpha);
    small.add_to_diag(alpha);
    let rhs: Vec<f64> = gb.iter().map(|v| -v).collect();
    (dw, na_solve(&small, &rhs))
}

fn criterion_6_ea_cg() -> Outcome {
    let mut rng = rng(606);
    let exact_cfg = SolverConfig {
        alpha: 0.1,
        max_cg: 200,
        eps_cg: 1e-15,
        hvp_mode: HvpMode::ExactKron,
        ..SolverConfig::default()
    };
    let one_rank_cfg = SolverConfig {
        hvp_mode: HvpMode::EaOneRank,
        ..exact_cfg
    };
    let mut worst_dense = 0.0f64;
    let mut worst_rank = 0.0f64;
    for case in 0..40 {
        let widths = vec![rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(2..=4)];
        let act = if case % 2 == 0 { Activation::Sigmoid } else { Activation::Relu };
        let crit = random_criterion(&mut rng);
        let kind = [CurvatureKind::PCH1, CurvatureKind::PCH2, CurvatureKind::Fisher][case % 3];
        let model = random_model(&mut rng, &widths, act, 1.0);

        let (xs, ys) = random_batch(&mut rng, 5, widths[0], widths[2]);
        let batch = evaluate_batch(&model, &crit, &xs, &ys).map_err(|e| e.to_string())?;
        let curv = ea_curvature(&model, &batch, kind).map_err(|e| e.to_string())?;
        let d = ea_cg_direction(&curv, &batch.mean_grads, &exact_cfg).map_err(|e| e.to_string())?;
        for (t, lc) in curv.iter().enumerate() {
            let (dw, db) = dense_ea_solve(lc, &batch.mean_grads.weight[t], &batch.mean_grads.bias[t], exact_cfg.alpha);
            let err = max_abs_diff(&d.weight[t].to_vec_colmajor(), &dw).max(max_abs_diff(&d.bias[t], &db));
            worst_dense = worst_dense.max(err);
            ensure(err <= 1e-8, || format!("case {case} layer {}: ExactKron vs dense {err:e}", t + 1))?;
        }

        let (x1, y1) = random_batch(&mut rng, 1, widths[0], widths[2]);
        let b1 = evaluate_batch(&model, &crit, &x1, &y1).map_err(|e| e.to_string())?;
        let c1 = ea_curvature(&model, &b1, kind).map_err(|e| e.to_string())?;
        let a = ea_cg_direction(&c1, &b1.mean_grads, &exact_cfg).map_err(|e| e.to_string())?;
        let b = ea_cg_direction(&c1, &b1.mean_grads, &one_rank_cfg).map_err(|e| e.to_string())?;
        let err = max_abs_diff(&a.flatten(), &b.flatten());
        worst_rank = worst_rank.max(err);
        ensure(err <= 1e-10, || format!("case {case}: batch-1 EaOneRank vs ExactKron {err:e}"))?;
    }

    // Space: the widest layer of the full-width network would need a
    // (1024*3072)^2 matrix; use a mid-size net and compare against the bound.
    let widths = [48, 40, 36, 10];
    let model = random_model(&mut rng, &widths, Activation::Sigmoid, 0.3);
    let (xs, ys) = random_batch(&mut rng, 16, widths[0], 10);
    let batch = evaluate_batch(&model, &Criterion::CrossEntropySoftmax, &xs, &ys).map_err(|e| e.to_string())?;
    let curv = ea_curvature(&model, &batch, CurvatureKind::PCH1).map_err(|e| e.to_string())?;
    let cfg = SolverConfig {
        max_cg: 30,
        ..SolverConfig::default()
    };
    let (res, peak) = peak_allocation(|| ea_cg_direction(&curv, &batch.mean_grads, &cfg));
    res.map_err(|e| e.to_string())?;
    let bound = widths
        .windows(2)
        .map(|w| (w[0] * w[1]).max(w[1] * w[1]))
        .max()
        .unwrap()
        * 8;
    let kron_bytes = (widths[0] * widths[1]).pow(2) * 8;
    ensure(peak <= bound, || format!("EaOneRank peak allocation {peak} B exceeds {bound} B"))?;
    // the tracker sees a materialized Kronecker product
    let (_, kron_peak) = peak_allocation(|| kron(&curv[0].ehh_t, &curv[0].hb));
    ensure(kron_peak >= kron_bytes, || format!("tracker missed a {kron_bytes} B allocation"))?;

    Ok(format!(
        "dense {worst_dense:e}, batch-1 {worst_rank:e}, peak allocation {peak} B <= {bound} B (Kronecker block {kron_bytes} B)"
    ))
}

fn criterion_7_kfi() -> Outcome {
    let mut rng = rng(707);
    let mut worst = 0.0f64;
    let mut worst_sm = 0.0f64;
    for case in 0..40 {
        let widths = random_widths(&mut rng, 3, 6);
        let act = if case % 2 == 0 { Activation::Sigmoid } else { Activation::Relu };
        let model = random_model(&mut rng, &widths, act, 1.0);
        let (xs, ys) = random_batch(&mut rng, 4, widths[0], *widths.last().unwrap());
        let crit = random_criterion(&mut rng);
        let batch = evaluate_batch(&model, &crit, &xs, &ys).map_err(|e| e.to_string())?;
        let kind = [CurvatureKind::Fisher, CurvatureKind::PCH1][case % 2];
        let curv = ea_curvature(&model, &batch, kind).map_err(|e| e.to_string())?;
        let policy = [PiPolicy::Unit, PiPolicy::TraceNorm][(case / 2) % 2];
        let alpha: f64 = rng.random_range(0.01..0.5);
        let cfg = SolverConfig {
            alpha,
            pi_policy: policy,
            ..SolverConfig::default()
        };
        let sa = alpha.sqrt();
        let g = &batch.mean_grads;

        let d = kfi_direction(&curv, g, &cfg).map_err(|e| e.to_string())?;
        let sm = kfi_direction(
            &curv,
            g,
            &SolverConfig {
                kfi_rank_one_first_layer: true,
                ..cfg
            },
        )
        .map_err(|e| e.to_string())?;

        for (t, lc) in curv.iter().enumerate() {
            let pi = match policy {
                PiPolicy::Unit => 1.0,
                PiPolicy::TraceNorm => {
                    let a = lc.ehh_t.trace() / lc.ehh_t.rows() as f64;
                    let b = lc.hb.trace() / lc.hb.rows() as f64;
                    if a > 0.0 && b > 0.0 {
                        (a / b).sqrt()
                    } else {
                        1.0
                    }
                }
            };
            let mut gf = lc.hb.clone();
            gf.add_to_diag(sa / pi);
            let mut hf = lc.ehh_t.clone();
            hf.add_to_diag(pi * sa);
            let mut bf = lc.hb.clone();
            bf.add_to_diag(sa);
            let gi = na_inverse(&gf);
            let dw = gi.matmul(&g.weight[t]).unwrap().matmul(&na_inverse(&hf)).unwrap().scaled(-1.0);
            let db: Vec<f64> = na_inverse(&bf).matvec(&g.bias[t]).unwrap().iter().map(|v| -v).collect();
            let err = max_abs_diff(d.weight[t].as_slice(), dw.as_slice()).max(max_abs_diff(&d.bias[t], &db));
            worst = worst.max(err);
            ensure(err <= 1e-8, || format!("case {case} layer {}: KFI vs dense {err:e}", t + 1))?;

            if t == 0 {
                let mut r1 = DenseMatrix::outer(&lc.eh, &lc.eh);
                r1.add_to_diag(pi * sa);
                let dw1 = gi.matmul(&g.weight[0]).unwrap().matmul(&na_inverse(&r1)).unwrap().scaled(-1.0);
                let err = max_abs_diff(sm.weight[0].as_slice(), dw1.as_slice());
                worst_sm = worst_sm.max(err);
                ensure(err <= 1e-10, || format!("case {case}: Sherman-Morrison vs dense {err:e}"))?;
            } else {
                ensure(sm.weight[t] == d.weight[t], || format!("case {case}: rank-one flag touched layer {}", t + 1))?;
            }
        }
    }
    Ok(format!("factor oracle {worst:e}, Sherman-Morrison {worst_sm:e}"))
}

fn criterion_8_covariance_bound() -> Outcome {
    let mut rng = rng(808);
    let mut max_ratio = 0.0f64;
    for (act, l) in [(Activation::Sigmoid, 0.25), (Activation::Relu, 1.0)] {
        for case in 0..100 {
            let k = rng.random_range(2..=4);
            let mut widths: Vec<usize> = (0..k).map(|_| rng.random_range(1..=8)).collect();
            widths.push(rng.random_range(2..=8));
            let model = random_model(&mut rng, &widths, act, 1.0);
            let (xs, ys) = random_batch(&mut rng, 8, widths[0], *widths.last().unwrap());
            let crit = random_criterion(&mut rng);
            let batch = evaluate_batch(&model, &crit, &xs, &ys).map_err(|e| e.to_string())?;
            let layer = rng.random_range(2..=k);
            let (lhs, rhs) = covariance_bound_check(&model, &batch, layer, l).map_err(|e| e.to_string())?;
            ensure(lhs <= rhs, || format!("{act:?} case {case} layer {layer}: lhs {lhs:e} > rhs {rhs:e}"))?;
            if rhs > 0.0 {
                max_ratio = max_ratio.max(lhs / rhs);
            }
        }
    }
    Ok(format!("200 configurations, max lhs/rhs {max_ratio:.4}"))
}

fn criterion_9_training_smoke() -> Outcome {
    let start = Instant::now();
    let base = |opt: &str| {
        ExperimentSpec::from_json(&format!(
            r#"{{"architecture": [2, 8, 2], "activation": "sigmoid", "optimizer": {opt},
                "epochs": 10, "seed": 3,
                "data": {{"type": "blobs", "classes": 2, "dim": 2, "per_class": 100, "spread": 0.1, "seed": 1}}}}"#
        ))
    };
    let grid = Grid {
        learning_rates: vec![0.003, 0.01, 0.03, 0.1],
        batch_sizes: vec![10, 40],
        alphas: vec![0.01, 0.1],
        max_cg: vec![],
        eps_cg: vec![],
    };
    let second = |curv: &str, solver: &str| {
        format!(r#"{{"type": "second_order", "curvature": {curv}, "solver": "{solver}", "solver_cfg": {{}}}}"#)
    };
    let optimizers = [
        ("SGD", r#"{"type": "sgd_momentum"}"#.to_string()),
        ("PCH-1+EA-CG", second(r#"{"type": "pch", "gamma": -1.0}"#, "ea_cg")),
        ("Fisher+EA-CG", second(r#"{"type": "fisher"}"#, "ea_cg")),
        ("Fisher+KFI", second(r#"{"type": "fisher"}"#, "kfi")),
    ];
    let mut finals = Vec::new();
    let mut summary = Vec::new();
    for (name, opt) in &optimizers {
        let spec = base(opt).map_err(|e| e.to_string())?;
        let cfg = eacg::trainer::TrainConfig {
            record_wall_time: false,
            ..spec.train_config()
        };
        let result = grid_search(&spec.init_model().unwrap(), &spec.dataset().unwrap(), &cfg, &grid)
            .map_err(|e| format!("{name}: {e}"))?;
        let monotone = result
            .runs
            .iter()
            .filter(|r| r.report.epochs.windows(2).all(|w| w[1].loss < w[0].loss))
            .count();
        ensure(monotone > 0, || format!("{name}: no grid setting decreases the loss monotonically"))?;
        summary.push(format!("{name} {monotone}/{}", result.runs.len()));
        finals.push(
            result
                .runs
                .iter()
                .map(|r| r.report.final_loss())
                .collect::<Vec<_>>(),
        );
    }
    let best_sgd = finals[0].iter().copied().fold(f64::INFINITY, f64::min);
    let best_pch = finals[1].iter().copied().fold(f64::INFINITY, f64::min);
    ensure(best_pch <= best_sgd, || format!("PCH-1+EA-CG best {best_pch:.4} > SGD best {best_sgd:.4}"))?;
    within(start, Duration::from_secs(300))?;
    Ok(format!(
        "monotone settings: {}; final loss PCH-1 {best_pch:.4} <= SGD {best_sgd:.4}",
        summary.join(", ")
    ))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_eacg"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} exited with {}: {}", out.status, String::from_utf8_lossy(&out.stderr))
    })
}

fn criterion_10_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("c.json");
    std::fs::write(
        &config,
        r#"{"architecture": [8, 6, 5, 4, 3], "epochs": 3, "batch_size": 16, "comparison_steps": 4,
            "optimizer": {"type": "second_order", "curvature": {"type": "pch", "gamma": -1.0}, "solver": "ea_cg"},
            "data": {"type": "blobs", "classes": 3, "dim": 8, "per_class": 30, "spread": 0.2, "seed": 5}}"#,
    )
    .map_err(|e| e.to_string())?;
    let cfg = config.to_str().unwrap();
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let out = out.to_str().unwrap();
        run_cli(&["train", "--config", cfg, "--seed", "7", "--out", out, "--no-wall-clock"])?;
        run_cli(&["compare-curvature", "--config", cfg, "--seed", "7", "--out", out])?;
        let read = |f: &str| std::fs::read(dir.path().join(run).join(f)).map_err(|e| e.to_string());
        outputs.push((read("metrics.jsonl")?, read("summary.csv")?, read("errors.csv")?));
    }
    ensure(outputs[0] == outputs[1], || "metrics differ between identical runs".into())?;
    Ok(format!(
        "metrics.jsonl ({} B), summary.csv, errors.csv bit-identical",
        outputs[0].0.len()
    ))
}

#[test]
fn acceptance_criteria() {
    let criteria: [NamedCheck; 10] = [
        ("gradient oracle", criterion_1_gradient_oracle),
        ("exact bias-Hessian recursion oracle", criterion_2_hessian_oracle),
        ("PSD suite", criterion_3_psd_suite),
        ("output-layer exactness", criterion_4_output_layer_exact),
        ("error-table ordering", criterion_5_table_ordering),
        ("EA-CG correctness", criterion_6_ea_cg),
        ("KFI correctness", criterion_7_kfi),
        ("covariance bound", criterion_8_covariance_bound),
        ("training smoke", criterion_9_training_smoke),
        ("determinism", criterion_10_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail} [{secs:.1}s]", i + 1),
            Err(why) => {
                println!("criterion {:>2} FAIL  {name}: {why} [{secs:.1}s]", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
