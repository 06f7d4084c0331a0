use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use crate::data::write_csv;
use crate::error::{Error, Result};
use crate::harness::{compare_curvatures, run_bound_check, ExperimentSpec};
use crate::trainer::{grid_search, train, TrainConfig, TrainReport};

pub const EXIT_OK: i32 = 0;
/// The bound check ran but `lhs > rhs` on some trial.
pub const EXIT_CHECK_FAILED: i32 = 1;
/// Usage, configuration, parse or I/O error.
pub const EXIT_CONFIG: i32 = 2;
/// Solver breakdown, eigensolver failure or divergence.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "eacg", version, about = "Second-order training experiments for fully-connected networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one configuration; writes metrics.jsonl, summary.csv and model.json.
    Train(Common),
    /// Train every grid point; writes grid.csv and runs/run-NNN.jsonl.
    Grid(Common),
    /// Average layer-wise curvature errors along a trajectory; writes errors.csv.
    CompareCurvature(Common),
    /// Evaluate the activation-derivative covariance bound; prints lhs, rhs, PASS/FAIL.
    BoundCheck(Common),
    /// Materialize the configured dataset as data.csv (label in the last column).
    GenData(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment description (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Record wall_s as 0 so metrics files are reproducible byte for byte.
    #[arg(long)]
    no_wall_clock: bool,
}

impl Common {
    fn spec(&self) -> Result<ExperimentSpec> {
        let mut spec = match &self.config {
            Some(path) => ExperimentSpec::load(path)?,
            None => ExperimentSpec::default(),
        };
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        spec.validate()?;
        Ok(spec)
    }

    fn train_config(&self, spec: &ExperimentSpec) -> TrainConfig {
        TrainConfig {
            record_wall_time: !self.no_wall_clock,
            ..spec.train_config()
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code. Diagnostics go to stderr.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_CONFIG,
            };
        }
    };
    match run(parsed.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_CONFIG
            }
        }
    }
}

fn run(command: Command) -> Result<i32> {
    match command {
        Command::Train(c) => cmd_train(&c),
        Command::Grid(c) => cmd_grid(&c),
        Command::CompareCurvature(c) => cmd_compare(&c),
        Command::BoundCheck(c) => cmd_bound_check(&c),
        Command::GenData(c) => cmd_gen_data(&c),
    }
}

fn cmd_train(c: &Common) -> Result<i32> {
    let spec = c.spec()?;
    let dataset = spec.dataset()?;
    let cfg = c.train_config(&spec);
    let report = train(spec.init_model()?, &dataset, &cfg)?;
    let out = c.out_dir()?;
    write_atomic(&out.join("metrics.jsonl"), report.to_json_lines().as_bytes())?;
    write_atomic(&out.join("summary.csv"), &summary_csv(&[(&cfg, &report)])?)?;
    write_atomic(
        &out.join("model.json"),
        serde_json::to_string_pretty(&report.model)?.as_bytes(),
    )?;
    println!(
        "{}: final loss {:.6}, test accuracy {:.4}",
        cfg.optimizer.label(),
        report.final_loss(),
        report.final_test_acc()
    );
    Ok(EXIT_OK)
}

fn cmd_grid(c: &Common) -> Result<i32> {
    let spec = c.spec()?;
    let grid = spec
        .grid
        .clone()
        .ok_or_else(|| Error::Config("the `grid` subcommand needs a `grid` section in the config".into()))?;
    let dataset = spec.dataset()?;
    let base = c.train_config(&spec);
    let result = grid_search(&spec.init_model()?, &dataset, &base, &grid)?;
    let out = c.out_dir()?;
    let runs_dir = out.join("runs");
    fs::create_dir_all(&runs_dir)?;
    for (i, run) in result.runs.iter().enumerate() {
        write_atomic(
            &runs_dir.join(format!("run-{i:03}.jsonl")),
            run.report.to_json_lines().as_bytes(),
        )?;
    }
    let rows: Vec<_> = result.runs.iter().map(|r| (&r.config, &r.report)).collect();
    write_atomic(&out.join("grid.csv"), &summary_csv(&rows)?)?;
    println!(
        "{} runs; best loss: run-{:03}, best test accuracy: run-{:03}",
        result.runs.len(),
        result.best_by_loss,
        result.best_by_accuracy
    );
    Ok(EXIT_OK)
}

fn cmd_compare(c: &Common) -> Result<i32> {
    let spec = c.spec()?;
    let table = compare_curvatures(&spec)?;
    let csv = table.to_csv();
    write_atomic(&c.out_dir()?.join("errors.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(EXIT_OK)
}

fn cmd_bound_check(c: &Common) -> Result<i32> {
    let spec = c.spec()?;
    let outcome = run_bound_check(&spec)?;
    for (i, (lhs, rhs)) in outcome.trials.iter().enumerate() {
        let verdict = if lhs <= rhs { "PASS" } else { "FAIL" };
        println!("trial {i}: layer {} L {} lhs {lhs:e} rhs {rhs:e} {verdict}", outcome.layer, outcome.lipschitz);
    }
    if outcome.passed() {
        println!("PASS");
        Ok(EXIT_OK)
    } else {
        println!("FAIL");
        Ok(EXIT_CHECK_FAILED)
    }
}

fn cmd_gen_data(c: &Common) -> Result<i32> {
    let spec = c.spec()?;
    let dataset = spec.dataset()?;
    let path = c.out_dir()?.join("data.csv");
    let tmp = temp_path(&path);
    write_csv(&dataset, &tmp)?;
    fs::rename(&tmp, &path)?;
    println!("{} instances, {} features", dataset.len(), dataset.dim());
    Ok(EXIT_OK)
}

fn summary_csv(rows: &[(&TrainConfig, &TrainReport)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record([
        "optimizer",
        "learning_rate",
        "batch_size",
        "alpha",
        "max_cg",
        "eps_cg",
        "epochs",
        "final_loss",
        "final_test_acc",
    ])
    .map_err(io)?;
    for (cfg, report) in rows {
        let (alpha, max_cg, eps_cg) = match cfg.optimizer {
            crate::trainer::Optimizer::SecondOrder { solver_cfg, .. } => (
                format!("{:?}", solver_cfg.alpha),
                solver_cfg.max_cg.to_string(),
                format!("{:?}", solver_cfg.eps_cg),
            ),
            crate::trainer::Optimizer::SgdMomentum => ("-".into(), "-".into(), "-".into()),
        };
        w.write_record([
            cfg.optimizer.label(),
            format!("{:?}", cfg.learning_rate),
            cfg.batch_size.to_string(),
            alpha,
            max_cg,
            eps_cg,
            cfg.epochs.to_string(),
            format!("{:?}", report.final_loss()),
            format!("{:?}", report.final_test_acc()),
        ])
        .map_err(io)?;
    }
    w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

fn temp_path(path: &Path) -> PathBuf {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!(".{name}.tmp-{}", std::process::id()))
}

/// Write to a sibling temp file, then rename over the target.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
