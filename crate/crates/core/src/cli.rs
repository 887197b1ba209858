//! Command-line front end: `gen-data`, `train`, `eval` and `copula-grid`.
//!
//! Exit codes: 0 success, 2 configuration or data error, 3 I/O failure,
//! 4 training divergence, 5 missing artifact, 1 anything else.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::copula::{density_grid_csv, Copula, Family};
use crate::data::{generate_synthetic, load_dataset, write_atomic, SynthSpec};
use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::metrics::{bootstrap_ci, metrics_csv, Metric, MetricRow, ScoredSet, DEFAULT_ITERS, DEFAULT_LEVEL};
use crate::model::Checkpoint;
use crate::trainer::{best_run, grid_search, history_csv, predict, CheckpointConfig, GridRun, TrainConfig};

pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.csv";

const TRAIN_HELP: &str = "\
Search grids (list-valued keys in the config JSON; a scalar is a one-point grid):
  learning_rate  1e-4, 5e-5, 1e-5           [default 1e-4]
  lambda_cop     1e-5, 5e-6, 1e-6           [default 1e-5]
  k              1, 2, 3, 4, 5, 6           [default 3]
  temperature    0.001, 0.005, 0.01, 0.05, 0.08   [default 0.05]
  dropout        0, 0.1, 0.2, 0.3           [default 0]
  alignment      copula, cosine, kl, none   [default copula]
Fixed keys: epochs 100, batch_size 32, patience 15, family gumbel, gps true,
joint_nll true, weight_kind logits, hidden 32, latent 16, seed (CMCM_SEED or 0).
Optimizer: Adam (beta1 0.9, beta2 0.999, eps 1e-8).";

#[derive(Debug, Parser)]
#[command(name = "cmcm", version, about = "Copula-aligned multimodal training on synthetic data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory from a JSON spec.
    GenData(GenDataArgs),
    /// Train one configuration or a grid of configurations.
    #[command(after_help = TRAIN_HELP)]
    Train(TrainArgs),
    /// Evaluate a trained run with bootstrap confidence intervals.
    Eval(EvalArgs),
    /// Write a 101×101 bivariate copula density grid as CSV.
    CopulaGrid(GridArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Dataset spec (JSON).
    #[arg(long)]
    pub spec: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed used when the spec has none.
    #[arg(long, env = "CMCM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Overwrite an existing output.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Training config (JSON); every key is optional.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Concurrent grid-point workers.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Seed used when the config has none.
    #[arg(long, env = "CMCM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Overwrite an existing output.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory written by train.
    #[arg(long)]
    pub run: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Split to score: train, valid or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Bootstrap iterations.
    #[arg(long, default_value_t = DEFAULT_ITERS)]
    pub iters: usize,
    /// Confidence level.
    #[arg(long, default_value_t = DEFAULT_LEVEL)]
    pub level: f64,
    /// Bootstrap seed.
    #[arg(long, env = "CMCM_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Report path; defaults to metrics.csv in the run directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing report.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    /// clayton, frank, gumbel, gaussian, student_t or independence.
    #[arg(long)]
    pub family: String,
    /// Comma-separated constrained values: alpha, rho, or rho,nu.
    #[arg(long, default_value = "", allow_hyphen_values = true)]
    pub params: String,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Overwrite an existing output.
    #[arg(long)]
    pub force: bool,
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 3,
        Error::Divergence { .. } => 4,
        Error::MissingArtifact(_) => 5,
        Error::Config(_)
        | Error::DataFormat { .. }
        | Error::ArityMismatch { .. }
        | Error::UnsupportedDim { .. }
        | Error::Domain { .. }
        | Error::NotPositiveDefinite(_)
        | Error::AllModalitiesAtRisk
        | Error::DimMismatch { .. }
        | Error::ShapeMismatch { .. } => 2,
        _ => 1,
    }
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!("{} exists; pass --force to overwrite", path.display())));
    }
    Ok(())
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!("{}: line {} column {}: {e}", path.display(), e.line(), e.column()))
    })
}

fn with_default_seed(mut v: serde_json::Value, seed: u64, path: &Path) -> Result<serde_json::Value> {
    let obj = v
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("{}: expected a JSON object", path.display())))?;
    if obj.get("seed").is_none_or(serde_json::Value::is_null) {
        obj.insert("seed".into(), seed.into());
    }
    Ok(v)
}

fn from_value<T: serde::de::DeserializeOwned>(v: serde_json::Value, path: &Path) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Config(e.to_string()))
}

pub fn cmd_gen_data(a: &GenDataArgs) -> Result<()> {
    let spec: SynthSpec = from_value(with_default_seed(read_json(&a.spec)?, a.seed, &a.spec)?, &a.spec)?;
    spec.validate()?;
    refuse_existing(&a.out.join("manifest.txt"), a.force)?;
    let s = generate_synthetic(&spec, &a.out)?;
    for (name, split) in crate::data::SPLITS.iter().zip(&s.splits) {
        let missing: Vec<usize> = split.batch.present.iter().map(|p| p.iter().filter(|&&x| !x).count()).collect();
        println!("{name}: {} rows, absent per modality {missing:?}", split.batch.len());
    }
    Ok(())
}

fn write_run(dir: &Path, r: &GridRun) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("run.json"), to_json(&r.run)?.as_bytes())?;
    match &r.outcome {
        Ok(o) => {
            write_atomic(&dir.join(CHECKPOINT_FILE), o.checkpoint.to_text().as_bytes())?;
            write_atomic(&dir.join(HISTORY_FILE), history_csv(&o.history).as_bytes())
        }
        Err(msg) => write_atomic(&dir.join("error.txt"), format!("{msg}\n").as_bytes()),
    }
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let raw = match &a.config {
        Some(p) => with_default_seed(read_json(p)?, a.seed, p)?,
        None => serde_json::json!({ "seed": a.seed }),
    };
    let cfg_path = a.config.clone().unwrap_or_else(|| PathBuf::from("<defaults>"));
    let cfg: TrainConfig = from_value(raw, &cfg_path)?;
    cfg.validate()?;
    refuse_existing(&a.out.join("config.json"), a.force)?;
    let data = load_dataset(&a.data)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_atomic(&a.out.join("config.json"), to_json(&cfg)?.as_bytes())?;

    let points = cfg.grid_points();
    if points.len() == 1 {
        let run = &points[0];
        return match crate::trainer::train(run, &data.train, &data.valid) {
            Ok(o) => {
                write_run(
                    &a.out,
                    &GridRun {
                        index: 0,
                        run: run.clone(),
                        outcome: Ok(o.clone()),
                    },
                )?;
                println!("best valid AUROC {} at epoch {} of {}", g9(o.best_valid_auroc), o.best_epoch, o.history.len());
                Ok(())
            }
            Err(Error::Divergence { epoch, last_good }) => {
                write_atomic(&a.out.join("run.json"), to_json(run)?.as_bytes())?;
                if let Some(ck) = &last_good {
                    write_atomic(&a.out.join("checkpoint.last_good.txt"), ck.to_text().as_bytes())?;
                }
                Err(Error::Divergence { epoch, last_good })
            }
            Err(e) => Err(e),
        };
    }

    let runs = grid_search(&cfg, &data.train, &data.valid, a.jobs)?;
    let mut summary = String::from("index,label,status,best_epoch,best_valid_auroc\n");
    for r in &runs {
        let name = format!("{:03}_{}", r.index, r.run.label());
        write_run(&a.out.join(&name), r)?;
        match &r.outcome {
            Ok(o) => summary.push_str(&format!("{},{},ok,{},{}\n", r.index, name, o.best_epoch, g9(o.best_valid_auroc))),
            Err(_) => summary.push_str(&format!("{},{},failed,,\n", r.index, name)),
        }
    }
    write_atomic(&a.out.join("grid.csv"), summary.as_bytes())?;
    let Some(best) = best_run(&runs) else {
        return Err(Error::Divergence {
            epoch: 0,
            last_good: None,
        });
    };
    let name = format!("{:03}_{}", best, runs[best].run.label());
    write_atomic(&a.out.join("best.txt"), format!("{name}\n").as_bytes())?;
    let o = runs[best].outcome.as_ref().expect("best run succeeded");
    println!("{} grid points; best {name} with valid AUROC {}", runs.len(), g9(o.best_valid_auroc));
    Ok(())
}

/// The checkpoint of a run directory, following `best.txt` for grid runs.
pub fn resolve_checkpoint(run: &Path) -> Result<PathBuf> {
    let direct = run.join(CHECKPOINT_FILE);
    if direct.exists() {
        return Ok(direct);
    }
    let best = run.join("best.txt");
    if best.exists() {
        let name = fs::read_to_string(&best).map_err(|e| Error::io(&best, e))?;
        let p = run.join(name.trim()).join(CHECKPOINT_FILE);
        if p.exists() {
            return Ok(p);
        }
        return Err(Error::MissingArtifact(p));
    }
    Err(Error::MissingArtifact(direct))
}

pub fn cmd_eval(a: &EvalArgs) -> Result<Vec<MetricRow>> {
    let ck_path = resolve_checkpoint(&a.run)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join(METRICS_FILE));
    refuse_existing(&out, a.force)?;
    let text = fs::read_to_string(&ck_path).map_err(|e| Error::io(&ck_path, e))?;
    let ck = Checkpoint::from_text(&text).map_err(|e| match e {
        Error::DataFormat { line, msg, .. } => Error::DataFormat {
            file: ck_path.clone(),
            line,
            msg,
        },
        other => other,
    })?;
    let cc = CheckpointConfig::parse(&ck)?;
    let data = load_dataset(&a.data)?;
    let batch = data.split(&a.split)?;
    let scores = predict(&cc.model, &cc.run, &ck.params, batch, cc.run.seed)?;
    let set = ScoredSet::from_f64(scores, &batch.y)?;
    let mut rows = Vec::new();
    for metric in [Metric::Auroc, Metric::Aupr] {
        let interval = bootstrap_ci(metric, &set, a.iters, a.level, a.seed)?;
        println!(
            "{} {}: {} [{}, {}]",
            a.split,
            metric.name(),
            g9(interval.point),
            g9(interval.lo),
            g9(interval.hi)
        );
        rows.push(MetricRow {
            task: a.split.clone(),
            metric,
            interval,
        });
    }
    write_atomic(&out, metrics_csv(&rows).as_bytes())?;
    let meta = format!(
        "checkpoint={}\nsplit={}\nrows={}\niters={}\nlevel={}\nseed={}\n",
        ck_path.display(),
        a.split,
        set.len(),
        a.iters,
        g9(a.level),
        a.seed
    );
    write_atomic(&out.with_extension("meta.txt"), meta.as_bytes())?;
    Ok(rows)
}

pub fn cmd_copula_grid(a: &GridArgs) -> Result<()> {
    let family: Family = a.family.parse()?;
    let values: Vec<f64> = a
        .params
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Error::Config(format!("not a number: '{s}'"))))
        .collect::<Result<_>>()?;
    let c = Copula::from_values(family, &values, 2)?;
    refuse_existing(&a.out, a.force)?;
    write_atomic(&a.out, density_grid_csv(&c)?.as_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a).map(|_| ()),
        Command::CopulaGrid(a) => cmd_copula_grid(a),
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

