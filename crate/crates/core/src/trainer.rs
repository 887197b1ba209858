//! Minibatch training of the network, the per-modality mixtures and the
//! copula parameters, with early stopping on validation AUROC and a
//! grid-search driver.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::copula::{dependence_measure, CopulaModel, Family};
use crate::data::shuffled_batches;
use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::gmm::{gmm_gps_sample, sample_one, GmmMarginal, GmmNodes, WeightKind, DEFAULT_K};
use crate::metrics::{auroc, ScoredSet};
use crate::model::{encode, init_params, model_forward, Checkpoint, ForwardOptions, Mode, ModelConfig, MultimodalBatch};
use crate::objective::{baseline_alignment_loss, bce_loss, copula_alignment_term, elbo, AlignmentKind};
use crate::optim::{adam_step, collect_grads, tape_leaves, Adam, OptimizerState, ParamSet};

pub const COPULA_PARAM: &str = "copula.raw";
/// Stream offset for validation-time imputation draws.
const VALID_STREAM: u64 = 0x5641_4c49_4400_0001;

/// Learning-rate grid.
pub const LR_GRID: [f64; 3] = [1e-4, 5e-5, 1e-5];
pub const LAMBDA_GRID: [f64; 3] = [1e-5, 5e-6, 1e-6];
pub const K_GRID: [usize; 6] = [1, 2, 3, 4, 5, 6];
pub const TEMPERATURE_GRID: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.08];
pub const DROPOUT_GRID: [f64; 4] = [0.0, 0.1, 0.2, 0.3];

/// A single value or a list of values to search over.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Grid<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Grid<T> {
    pub fn values(&self) -> Vec<T> {
        match self {
            Grid::One(v) => vec![v.clone()],
            Grid::Many(v) => v.clone(),
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Grid::Many(v) if v.is_empty())
    }
}

fn d_epochs() -> usize {
    100
}
fn d_batch() -> usize {
    32
}
fn d_patience() -> usize {
    15
}
fn d_lr() -> Grid<f64> {
    Grid::One(LR_GRID[0])
}
fn d_lambda() -> Grid<f64> {
    Grid::One(LAMBDA_GRID[0])
}
fn d_k() -> Grid<usize> {
    Grid::One(DEFAULT_K)
}
fn d_temperature() -> Grid<f64> {
    Grid::One(0.05)
}
fn d_dropout() -> Grid<f64> {
    Grid::One(0.0)
}
fn d_family() -> Family {
    Family::Gumbel
}
fn d_alignment() -> Grid<AlignmentKind> {
    Grid::One(AlignmentKind::Copula)
}
fn d_true() -> bool {
    true
}
fn d_hidden() -> usize {
    32
}
fn d_latent() -> usize {
    16
}

/// Training configuration; list-valued fields define a search grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: Grid<f64>,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default = "d_lambda")]
    pub lambda_cop: Grid<f64>,
    #[serde(default = "d_k")]
    pub k: Grid<usize>,
    #[serde(default = "d_temperature")]
    pub temperature: Grid<f64>,
    #[serde(default = "d_dropout")]
    pub dropout: Grid<f64>,
    #[serde(default = "d_family")]
    pub family: Family,
    #[serde(default = "d_alignment")]
    pub alignment: Grid<AlignmentKind>,
    /// Gradient-preserving sampling for imputed rows during training.
    #[serde(default = "d_true")]
    pub gps: bool,
    /// Fit the mixtures by the joint log-likelihood `log c + Σ log f`.
    #[serde(default = "d_true")]
    pub joint_nll: bool,
    #[serde(default)]
    pub weight_kind: WeightKind,
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default = "d_latent")]
    pub latent: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

/// One point of a [`TrainConfig`] grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub lambda_cop: f64,
    pub k: usize,
    pub temperature: f64,
    pub dropout: f64,
    pub family: Family,
    pub alignment: AlignmentKind,
    pub gps: bool,
    pub joint_nll: bool,
    pub weight_kind: WeightKind,
    pub hidden: usize,
    pub latent: usize,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 || self.k == 0 {
            return bad("epochs, batch_size, patience and k must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.lambda_cop >= 0.0 && self.lambda_cop.is_finite()) {
            return bad(format!("lambda_cop must be nonnegative, got {}", self.lambda_cop));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }

    /// Short name used for grid-run directories.
    pub fn label(&self) -> String {
        format!(
            "{}_lr{}_lam{}_k{}_t{}_d{}",
            self.alignment.name(),
            g9(self.learning_rate),
            g9(self.lambda_cop),
            self.k,
            g9(self.temperature),
            g9(self.dropout)
        )
    }
}

/// Seed of grid point `index`.
pub fn derive_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_empty()
            || self.lambda_cop.is_empty()
            || self.k.is_empty()
            || self.temperature.is_empty()
            || self.dropout.is_empty()
            || self.alignment.is_empty()
        {
            return Err(Error::Config("every grid needs at least one value".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        self.grid_points().iter().try_for_each(RunConfig::validate)
    }

    /// Cartesian product in the order alignment, learning rate, λ, K,
    /// temperature, dropout (last varies fastest). Each point gets its own
    /// seed derived from the base seed and its index.
    pub fn grid_points(&self) -> Vec<RunConfig> {
        let seed = self.seed.unwrap_or(0);
        let mut out = Vec::new();
        for alignment in self.alignment.values() {
            for learning_rate in self.learning_rate.values() {
                for lambda_cop in self.lambda_cop.values() {
                    for k in self.k.values() {
                        for temperature in self.temperature.values() {
                            for dropout in self.dropout.values() {
                                out.push(RunConfig {
                                    epochs: self.epochs,
                                    batch_size: self.batch_size,
                                    learning_rate,
                                    patience: self.patience,
                                    lambda_cop,
                                    k,
                                    temperature,
                                    dropout,
                                    family: self.family,
                                    alignment,
                                    gps: self.gps,
                                    joint_nll: self.joint_nll,
                                    weight_kind: self.weight_kind,
                                    hidden: self.hidden,
                                    latent: self.latent,
                                    seed: derive_seed(seed, out.len()),
                                });
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Configuration stored in every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointConfig {
    pub model: ModelConfig,
    pub run: RunConfig,
}

impl CheckpointConfig {
    pub fn parse(ckpt: &Checkpoint) -> Result<Self> {
        serde_json::from_str(&ckpt.config).map_err(|e| Error::DataFormat {
            file: "checkpoint".into(),
            line: 2,
            msg: format!("config: {e}"),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// NaN when the validation labels hold a single class.
    pub valid_auroc: f64,
    pub tau: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_loss,valid_auroc,tau\n");
    for r in history {
        s.push_str(&format!("{},{},{},{}\n", r.epoch, g9(r.train_loss), g9(r.valid_auroc), g9(r.tau)));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EarlyStop {
    Continue,
    Stop,
}

/// Index of the best entry: the first strict maximum, ignoring NaN. The
/// first entry counts as best when none is finite.
fn best_index(history: &[f64]) -> usize {
    let mut best = 0;
    let mut best_v = f64::NAN;
    for (i, &v) in history.iter().enumerate() {
        if !v.is_nan() && (best_v.is_nan() || v > best_v) {
            best = i;
            best_v = v;
        }
    }
    best
}

/// Stops once `patience` epochs have passed without improving on the best
/// validation AUROC.
pub fn early_stop_check(history: &[f64], patience: usize) -> EarlyStop {
    if history.is_empty() {
        return EarlyStop::Continue;
    }
    if history.len() - 1 - best_index(history) >= patience {
        EarlyStop::Stop
    } else {
        EarlyStop::Continue
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    /// Parameters at the best validation epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_auroc: f64,
}

/// Model, mixture and copula parameters at initialization.
pub fn init_all(model: &ModelConfig, run: &RunConfig, rng: &mut ChaCha8Rng) -> Result<ParamSet> {
    let mut params = init_params(model, rng)?;
    for (m, _) in model.modality_dims.iter().enumerate() {
        let g = GmmMarginal::init(run.k, model.latent, run.weight_kind, rng)?;
        g.insert_params(&format!("gmm{m}"), &mut params);
    }
    let c = CopulaModel::init(run.family, model.modalities())?;
    params.insert(COPULA_PARAM.into(), Tensor::vector(c.raw_params));
    Ok(params)
}

/// Copula model held in `params`.
pub fn copula_of(params: &ParamSet, family: Family, dim: usize) -> Result<CopulaModel> {
    let raw = params
        .get(COPULA_PARAM)
        .ok_or_else(|| Error::Config(format!("missing parameter {COPULA_PARAM}")))?;
    CopulaModel::new(family, raw.data().to_vec(), dim)
}

/// Kendall's tau of the copula in `params`; 0 for independence.
pub fn tau_of(params: &ParamSet, family: Family, dim: usize) -> Result<f64> {
    dependence_measure(&copula_of(params, family, dim)?)
}

/// Mixture of modality `m` held in `params`.
pub fn gmm_of(params: &ParamSet, run: &RunConfig, m: usize) -> Result<GmmMarginal> {
    GmmMarginal::from_params(&format!("gmm{m}"), run.weight_kind, params)
}

fn checkpoint(model: &ModelConfig, run: &RunConfig, params: &ParamSet) -> Result<Checkpoint> {
    let config = serde_json::to_string(&CheckpointConfig {
        model: model.clone(),
        run: run.clone(),
    })
    .map_err(|e| Error::Config(e.to_string()))?;
    Ok(Checkpoint {
        config,
        params: params.clone(),
    })
}

/// Predicted probabilities in evaluation mode. Absent modalities are filled
/// by plain mixture draws from a stream fixed by `seed`.
pub fn predict(model: &ModelConfig, run: &RunConfig, params: &ParamSet, batch: &MultimodalBatch, seed: u64) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = tape_leaves(&mut tape, params);
    let nodes = (0..model.modalities())
        .map(|m| GmmNodes::from_vars(&format!("gmm{m}"), run.weight_kind, &vars).map(Some))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fwd = model_forward(&mut tape, &vars, model, batch, &nodes, ForwardOptions::eval(), &mut rng)?;
    Ok(tape.value(fwd.y_hat).data().to_vec())
}

/// Evaluation-mode encoder outputs per modality, `[n, d]`, before imputation.
pub fn embed(model: &ModelConfig, params: &ParamSet, batch: &MultimodalBatch) -> Result<Vec<Tensor>> {
    batch.validate(model)?;
    let mut tape = Tape::new();
    let vars = tape_leaves(&mut tape, params);
    let mut out = Vec::with_capacity(model.modalities());
    for m in 0..model.modalities() {
        let x = tape.constant(batch.xs[m].clone());
        let z = encode::<ChaCha8Rng>(&mut tape, &vars, model, m, x, None)?;
        out.push(tape.value(z).clone());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImputeMode {
    /// Plain mixture draws.
    Sample,
    /// Tempered Gumbel-softmax component weights with reparameterized draws.
    Gps { temperature: f64 },
}

/// Replaces every absent row of `z[m]` (`[n, d]`) by a draw from `gmms[m]`.
/// Observed rows are returned bit-identical. Mixtures with an MLP weight
/// head are conditioned on the mean of the row's other observed embeddings.
pub fn impute_missing(
    z: &[Tensor],
    present: &[Vec<bool>],
    gmms: &[Option<GmmMarginal>],
    mode: ImputeMode,
    seed: u64,
) -> Result<Vec<Tensor>> {
    if present.len() != z.len() {
        return Err(Error::LengthMismatch(present.len(), z.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = z.to_vec();
    for (m, zm) in z.iter().enumerate() {
        let (n, d) = (zm.rows(), zm.cols());
        if present[m].len() != n {
            return Err(Error::LengthMismatch(present[m].len(), n));
        }
        let absent: Vec<usize> = (0..n).filter(|&i| !present[m][i]).collect();
        if absent.is_empty() {
            continue;
        }
        let g = gmms.get(m).and_then(Option::as_ref).ok_or(Error::MissingGmm(m))?;
        if g.dim != d {
            return Err(Error::DimMismatch { expected: g.dim, got: d });
        }
        for i in absent {
            let ctx = match g.kind() {
                WeightKind::Logits => None,
                WeightKind::Mlp => {
                    let mut acc = vec![0.0; d];
                    let mut count = 0;
                    for (q, zq) in z.iter().enumerate() {
                        if q != m && present[q][i] {
                            acc.iter_mut().zip(zq.row(i)).for_each(|(a, v)| *a += v);
                            count += 1;
                        }
                    }
                    if count > 0 {
                        acc.iter_mut().for_each(|a| *a /= count as f64);
                    }
                    Some(acc)
                }
            };
            let pi = g.mixture_weights(ctx.as_deref())?;
            let draw = match mode {
                ImputeMode::Sample => sample_one(g, &pi, &mut rng),
                ImputeMode::Gps { temperature } => {
                    let logits: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
                    gmm_gps_sample(g, &logits, temperature, rng.random())?
                }
            };
            out[m].data_mut()[i * d..(i + 1) * d].copy_from_slice(&draw);
        }
    }
    Ok(out)
}

fn all_finite(p: &ParamSet) -> bool {
    p.values().all(Tensor::all_finite)
}

/// One optimization step on `batch`; returns the loss before the update.
fn step(
    params: &mut ParamSet,
    state: &mut OptimizerState,
    model: &ModelConfig,
    run: &RunConfig,
    batch: &MultimodalBatch,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = tape_leaves(&mut tape, params);
    let nodes = (0..model.modalities())
        .map(|m| GmmNodes::from_vars(&format!("gmm{m}"), run.weight_kind, &vars))
        .collect::<Result<Vec<_>>>()?;
    let opts = ForwardOptions {
        mode: Mode::Train,
        dropout: run.dropout,
        gps: run.gps,
        temperature: run.temperature,
    };
    let some: Vec<Option<GmmNodes>> = nodes.iter().copied().map(Some).collect();
    let fwd = model_forward(&mut tape, &vars, model, batch, &some, opts, rng)?;
    let bce = bce_loss(&mut tape, fwd.y_hat, &batch.y)?;
    let loss = match run.alignment {
        AlignmentKind::None => bce,
        _ if run.lambda_cop == 0.0 => bce,
        AlignmentKind::Copula => {
            let raw = vars[COPULA_PARAM];
            let term = copula_alignment_term(&mut tape, &fwd.z, &nodes, run.family, raw, run.joint_nll)?;
            elbo(&mut tape, bce, term, run.lambda_cop)?
        }
        kind if batch.len() >= 2 => {
            let a = baseline_alignment_loss(&mut tape, kind, &fwd.z)?;
            let a = tape.scale(a, run.lambda_cop)?;
            tape.add(bce, a)?
        }
        _ => bce,
    };
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = tape.backward(loss)?;
    let grads = collect_grads(&grads, &tape, &vars);
    adam_step(params, &grads, state, Adam::new(run.learning_rate))?;
    Ok(value)
}

fn valid_auroc(model: &ModelConfig, run: &RunConfig, params: &ParamSet, valid: &MultimodalBatch) -> Result<f64> {
    let scores = predict(model, run, params, valid, run.seed ^ VALID_STREAM)?;
    match ScoredSet::from_f64(scores, &valid.y) {
        Ok(s) => Ok(auroc(&s)),
        Err(Error::SingleClass) => Ok(f64::NAN),
        Err(e) => Err(e),
    }
}

/// Trains one configuration. Returns the parameters of the epoch with the
/// best validation AUROC and one history entry per completed epoch.
/// A non-finite loss or parameter aborts with [`Error::Divergence`] carrying
/// the best checkpoint so far.
pub fn train(run: &RunConfig, train: &MultimodalBatch, valid: &MultimodalBatch) -> Result<TrainOutcome> {
    run.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Config("training and validation sets must be nonempty".into()));
    }
    let dims: Vec<usize> = train.xs.iter().map(Tensor::cols).collect();
    let model = ModelConfig {
        hidden: run.hidden,
        latent: run.latent,
        ..ModelConfig::new(dims)
    };
    train.validate(&model)?;
    valid.validate(&model)?;
    let m = model.modalities();
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut params = init_all(&model, run, &mut rng)?;
    let mut state = OptimizerState::default();
    let mut best = checkpoint(&model, run, &params)?;
    let mut best_epoch = 0;
    let mut history: Vec<EpochRecord> = Vec::new();
    let mut aurocs = Vec::new();
    for epoch in 1..=run.epochs {
        let mut total = 0.0;
        for idx in shuffled_batches(train.len(), run.batch_size, &mut rng) {
            let b = train.select(&idx);
            let loss = step(&mut params, &mut state, &model, run, &b, &mut rng)?;
            if !loss.is_finite() || !all_finite(&params) {
                log::warn!("divergence at epoch {epoch}");
                return Err(Error::Divergence {
                    epoch,
                    last_good: Some(Box::new(best)),
                });
            }
            total += loss * b.len() as f64;
        }
        let auc = valid_auroc(&model, run, &params, valid)?;
        aurocs.push(auc);
        let rec = EpochRecord {
            epoch,
            train_loss: total / train.len() as f64,
            valid_auroc: auc,
            tau: tau_of(&params, run.family, m)?,
        };
        log::debug!("epoch {epoch}: loss {} auroc {} tau {}", g9(rec.train_loss), g9(auc), g9(rec.tau));
        history.push(rec);
        if best_index(&aurocs) == aurocs.len() - 1 {
            best = checkpoint(&model, run, &params)?;
            best_epoch = epoch;
        }
        if early_stop_check(&aurocs, run.patience) == EarlyStop::Stop {
            log::info!("early stop at epoch {epoch}");
            break;
        }
    }
    Ok(TrainOutcome {
        checkpoint: best,
        best_valid_auroc: aurocs[best_epoch - 1],
        history,
        best_epoch,
    })
}

/// Result of one grid point; failures are recorded, not retried.
#[derive(Debug)]
pub struct GridRun {
    pub index: usize,
    pub run: RunConfig,
    pub outcome: std::result::Result<TrainOutcome, String>,
}

/// Trains every grid point of `cfg` with up to `jobs` concurrent workers.
/// Results come back in grid order.
pub fn grid_search(cfg: &TrainConfig, train_set: &MultimodalBatch, valid: &MultimodalBatch, jobs: usize) -> Result<Vec<GridRun>> {
    cfg.validate()?;
    let points = cfg.grid_points();
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<GridRun>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, points.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = points.get(i) else { break };
                let outcome = train(run, train_set, valid).map_err(|e| e.to_string());
                if let Err(e) = &outcome {
                    log::warn!("grid point {i} failed: {e}");
                }
                slots.lock().expect("no poisoned workers")[i] = Some(GridRun {
                    index: i,
                    run: run.clone(),
                    outcome,
                });
            });
        }
    });
    Ok(slots
        .into_inner()
        .expect("no poisoned workers")
        .into_iter()
        .map(|r| r.expect("every point visited"))
        .collect())
}

/// Index of the successful run with the highest best validation AUROC.
pub fn best_run(runs: &[GridRun]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in runs {
        if let Ok(o) = &r.outcome {
            let v = o.best_valid_auroc;
            if best.is_none_or(|(_, b)| v > b || b.is_nan()) {
                best = Some((r.index, v));
            }
        }
    }
    best.map(|b| b.0)
}
