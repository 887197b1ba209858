//! Per-modality MLP encoders, two-layer LSTM fusion over the modality
//! sequence, and a logistic classifier, plus the checkpoint container.

use std::fmt::Write as _;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gmm::{sample_one, GmmMarginal, GmmNodes, WeightNodes, WeightSource};
use crate::optim::{ParamSet, Vars};

pub const CHECKPOINT_MAGIC: &str = "CMCM-CKPT-1";
pub const LSTM_LAYERS: usize = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Feature width of each modality.
    pub modality_dims: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_latent")]
    pub latent: usize,
    /// Modality order fed to the fusion LSTM; empty means `0..M`.
    #[serde(default)]
    pub order: Vec<usize>,
}

fn default_hidden() -> usize {
    32
}

fn default_latent() -> usize {
    16
}

impl ModelConfig {
    pub fn new(modality_dims: Vec<usize>) -> Self {
        ModelConfig {
            modality_dims,
            hidden: default_hidden(),
            latent: default_latent(),
            order: Vec::new(),
        }
    }

    pub fn modalities(&self) -> usize {
        self.modality_dims.len()
    }

    pub fn fusion_order(&self) -> Vec<usize> {
        if self.order.is_empty() {
            (0..self.modalities()).collect()
        } else {
            self.order.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.modalities();
        if m == 0 || self.modality_dims.contains(&0) || self.hidden == 0 || self.latent == 0 {
            return Err(Error::Config(format!("invalid model sizes {self:?}")));
        }
        let mut seen = self.fusion_order();
        seen.sort_unstable();
        if seen != (0..m).collect::<Vec<_>>() {
            return Err(Error::Config(format!("fusion order {:?} is not a permutation of 0..{m}", self.order)));
        }
        Ok(())
    }
}

fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| u.sample(rng)).collect()).expect("shape")
}

/// Fresh network weights. Dense layers are uniform in `±1/√fan_in`; LSTM
/// weights uniform in `±1/√d` with forget-gate bias 1.
pub fn init_params(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<ParamSet> {
    cfg.validate()?;
    let (h, d) = (cfg.hidden, cfg.latent);
    let mut p = ParamSet::new();
    for (m, &dm) in cfg.modality_dims.iter().enumerate() {
        p.insert(format!("enc{m}.w1"), uniform(rng, &[dm, h], 1.0 / (dm as f64).sqrt()));
        p.insert(format!("enc{m}.b1"), Tensor::zeros(&[h]));
        p.insert(format!("enc{m}.w2"), uniform(rng, &[h, h], 1.0 / (h as f64).sqrt()));
        p.insert(format!("enc{m}.b2"), Tensor::zeros(&[h]));
        p.insert(format!("enc{m}.proj"), uniform(rng, &[h, d], 1.0 / (h as f64).sqrt()));
        p.insert(format!("enc{m}.proj_b"), Tensor::zeros(&[d]));
    }
    let bound = 1.0 / (d as f64).sqrt();
    for l in 0..LSTM_LAYERS {
        p.insert(format!("lstm{l}.w_ih"), uniform(rng, &[d, 4 * d], bound));
        p.insert(format!("lstm{l}.w_hh"), uniform(rng, &[d, 4 * d], bound));
        let mut b = vec![0.0; 4 * d];
        b[d..2 * d].iter_mut().for_each(|x| *x = 1.0);
        p.insert(format!("lstm{l}.b"), Tensor::vector(b));
    }
    p.insert("cls.w".into(), uniform(rng, &[d, 1], bound));
    p.insert("cls.b".into(), Tensor::zeros(&[1]));
    Ok(p)
}

fn var(vars: &Vars, name: &str) -> Result<Var> {
    vars.get(name)
        .copied()
        .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
}

fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let a = tape.matmul(x, w)?;
    tape.add(a, b)
}

fn dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut impl Rng) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let keep = 1.0 - rate;
    let n: usize = shape.iter().product();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    let m = tape.constant(Tensor::new(shape, mask)?);
    tape.mul(x, m)
}

/// Embeds `x: [n, D_m]` to `[n, d]`. Dropout `(rate, rng)` is applied after
/// both hidden layers when given.
pub fn encode<R: Rng>(
    tape: &mut Tape,
    vars: &Vars,
    cfg: &ModelConfig,
    m: usize,
    x: Var,
    mut drop: Option<(f64, &mut R)>,
) -> Result<Var> {
    let dm = *cfg.modality_dims.get(m).ok_or(Error::DimMismatch {
        expected: cfg.modalities(),
        got: m + 1,
    })?;
    let shape = tape.shape(x);
    if shape.len() != 2 || shape[1] != dm {
        return Err(Error::DimMismatch {
            expected: dm,
            got: shape.last().copied().unwrap_or(0),
        });
    }
    let mut h = x;
    for layer in 1..=2 {
        let w = var(vars, &format!("enc{m}.w{layer}"))?;
        let b = var(vars, &format!("enc{m}.b{layer}"))?;
        let a = dense(tape, h, w, b)?;
        h = tape.tanh(a)?;
        if let Some((rate, rng)) = drop.as_mut() {
            if *rate > 0.0 {
                h = dropout(tape, h, *rate, *rng)?;
            }
        }
    }
    let w = var(vars, &format!("enc{m}.proj"))?;
    let b = var(vars, &format!("enc{m}.proj_b"))?;
    dense(tape, h, w, b)
}

fn lstm_cell(tape: &mut Tape, vars: &Vars, layer: usize, x: Var, h: Var, c: Var, d: usize) -> Result<(Var, Var)> {
    let w_ih = var(vars, &format!("lstm{layer}.w_ih"))?;
    let w_hh = var(vars, &format!("lstm{layer}.w_hh"))?;
    let b = var(vars, &format!("lstm{layer}.b"))?;
    let a = tape.matmul(x, w_ih)?;
    let r = tape.matmul(h, w_hh)?;
    let g = tape.add(a, r)?;
    let g = tape.add(g, b)?;
    let gi = tape.slice(g, 1, 0, d)?;
    let gf = tape.slice(g, 1, d, 2 * d)?;
    let gg = tape.slice(g, 1, 2 * d, 3 * d)?;
    let go = tape.slice(g, 1, 3 * d, 4 * d)?;
    let i = tape.sigmoid(gi)?;
    let f = tape.sigmoid(gf)?;
    let cand = tape.tanh(gg)?;
    let o = tape.sigmoid(go)?;
    let keep = tape.mul(f, c)?;
    let write = tape.mul(i, cand)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// Runs the two-layer LSTM over the embeddings as a sequence and returns the
/// last hidden state of the top layer, `[n, d]`.
pub fn fuse(tape: &mut Tape, vars: &Vars, cfg: &ModelConfig, steps: &[Var]) -> Result<Var> {
    let d = cfg.latent;
    let first = steps.first().ok_or(Error::DimMismatch { expected: 1, got: 0 })?;
    let n = tape.shape(*first)[0];
    for &s in steps {
        if tape.shape(s) != [n, d] {
            return Err(Error::DimMismatch {
                expected: d,
                got: tape.shape(s).last().copied().unwrap_or(0),
            });
        }
    }
    let zero = tape.constant(Tensor::zeros(&[n, d]));
    let mut state = vec![(zero, zero); LSTM_LAYERS];
    for &x in steps {
        let mut input = x;
        for (layer, st) in state.iter_mut().enumerate() {
            *st = lstm_cell(tape, vars, layer, input, st.0, st.1, d)?;
            input = st.0;
        }
    }
    Ok(state[LSTM_LAYERS - 1].0)
}

/// `σ(fused · w + b)` as `[n]`.
pub fn classify(tape: &mut Tape, vars: &Vars, fused: Var) -> Result<Var> {
    let w = var(vars, "cls.w")?;
    let b = var(vars, "cls.b")?;
    let s = tape.shape(fused);
    if s.len() != 2 || s[1] != tape.shape(w)[0] {
        return Err(Error::DimMismatch {
            expected: tape.shape(w)[0],
            got: s.last().copied().unwrap_or(0),
        });
    }
    let n = s[0];
    let logit = dense(tape, fused, w, b)?;
    let p = tape.sigmoid(logit)?;
    tape.reshape(p, &[n])
}

/// Feature matrices, presence mask and labels for a set of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MultimodalBatch {
    /// `xs[m]` is `[n, D_m]`.
    pub xs: Vec<Tensor>,
    /// `present[m][i]` tells whether modality `m` is observed in row `i`.
    pub present: Vec<Vec<bool>>,
    pub y: Vec<f64>,
}

impl MultimodalBatch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let n = self.len();
        if self.xs.len() != cfg.modalities() || self.present.len() != cfg.modalities() {
            return Err(Error::DimMismatch {
                expected: cfg.modalities(),
                got: self.xs.len(),
            });
        }
        for (m, x) in self.xs.iter().enumerate() {
            if x.shape() != [n, cfg.modality_dims[m]] {
                return Err(Error::ShapeMismatch {
                    op: "batch",
                    lhs: x.shape().to_vec(),
                    rhs: vec![n, cfg.modality_dims[m]],
                });
            }
            if self.present[m].len() != n {
                return Err(Error::LengthMismatch(self.present[m].len(), n));
            }
        }
        Ok(())
    }

    /// Rows `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> MultimodalBatch {
        let xs = self
            .xs
            .iter()
            .map(|x| {
                let c = x.cols();
                let data = idx.iter().flat_map(|&i| x.row(i).to_vec()).collect();
                Tensor::new(vec![idx.len(), c], data).expect("shape")
            })
            .collect();
        MultimodalBatch {
            xs,
            present: self.present.iter().map(|p| idx.iter().map(|&i| p[i]).collect()).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub mode: Mode,
    pub dropout: f64,
    /// Gradient-preserving imputation in training mode; plain draws otherwise.
    pub gps: bool,
    pub temperature: f64,
}

impl ForwardOptions {
    pub fn eval() -> Self {
        ForwardOptions {
            mode: Mode::Eval,
            dropout: 0.0,
            gps: false,
            temperature: 1.0,
        }
    }
}

pub struct Forward {
    /// `[n]`
    pub y_hat: Var,
    /// Per-modality embeddings `[n, d]` after imputation.
    pub z: Vec<Var>,
}

/// Constant `[n, k]` matrix placing row `j` of a `[k, d]` block at row `rows[j]`.
fn scatter_matrix(n: usize, rows: &[usize]) -> Tensor {
    let mut s = Tensor::zeros(&[n, rows.len()]);
    for (j, &i) in rows.iter().enumerate() {
        s.data_mut()[i * rows.len() + j] = 1.0;
    }
    s
}

/// Mean of the observed embeddings of the other modalities in each of `rows`.
fn context(tape: &mut Tape, enc: &[Var], batch: &MultimodalBatch, skip: usize, rows: &[usize]) -> Result<Var> {
    let n = batch.len();
    let d = tape.shape(enc[0])[1];
    let mut acc = tape.constant(Tensor::zeros(&[rows.len(), d]));
    for (m, &z) in enc.iter().enumerate() {
        if m == skip {
            continue;
        }
        let mut w = Tensor::zeros(&[rows.len(), n]);
        for (j, &i) in rows.iter().enumerate() {
            let count = (0..enc.len()).filter(|&q| q != skip && batch.present[q][i]).count();
            if batch.present[m][i] {
                w.data_mut()[j * n + i] = 1.0 / count as f64;
            }
        }
        let wc = tape.constant(w);
        let part = tape.matmul(wc, z)?;
        acc = tape.add(acc, part)?;
    }
    Ok(acc)
}

/// Plain draws for each row of `log_w: [a, K]` from the mixture in `nodes`.
fn draw_rows(tape: &Tape, nodes: &GmmNodes, log_w: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    let means = tape.value(nodes.means).clone();
    let log_stds = tape.value(nodes.log_stds).clone();
    let (k, d) = (means.rows(), means.cols());
    let m = GmmMarginal {
        k,
        dim: d,
        means,
        log_stds,
        weights: WeightSource::Logits(Tensor::zeros(&[k])),
    };
    let a = log_w.rows();
    let mut out = Vec::with_capacity(a * d);
    for j in 0..a {
        let pi: Vec<f64> = log_w.row(j).iter().map(|l| l.exp()).collect();
        out.extend(sample_one(&m, &pi, rng));
    }
    Tensor::new(vec![a, d], out)
}

/// Full forward pass. Absent modalities are replaced by draws from their
/// mixture before fusion: gradient-preserving in training mode with `gps`,
/// plain otherwise.
pub fn model_forward(
    tape: &mut Tape,
    vars: &Vars,
    cfg: &ModelConfig,
    batch: &MultimodalBatch,
    gmms: &[Option<GmmNodes>],
    opts: ForwardOptions,
    rng: &mut ChaCha8Rng,
) -> Result<Forward> {
    batch.validate(cfg)?;
    let n = batch.len();
    let train = opts.mode == Mode::Train;
    let mut enc = Vec::with_capacity(cfg.modalities());
    for m in 0..cfg.modalities() {
        let x = tape.constant(batch.xs[m].clone());
        let drop = if train && opts.dropout > 0.0 {
            Some((opts.dropout, &mut *rng))
        } else {
            None
        };
        enc.push(encode(tape, vars, cfg, m, x, drop)?);
    }
    let mut z = enc.clone();
    for m in 0..cfg.modalities() {
        let absent: Vec<usize> = (0..n).filter(|&i| !batch.present[m][i]).collect();
        if absent.is_empty() {
            continue;
        }
        let nodes = gmms.get(m).copied().flatten().ok_or(Error::MissingGmm(m))?;
        let ctx = match nodes.weights {
            WeightNodes::Mlp { .. } => Some(context(tape, &enc, batch, m, &absent)?),
            WeightNodes::Logits(_) => None,
        };
        let log_w = nodes.log_weights(tape, absent.len(), ctx)?;
        let imputed = if train && opts.gps {
            nodes.gps_sample(tape, log_w, opts.temperature, rng)?
        } else {
            let lw = tape.value(log_w).clone();
            let draws = draw_rows(tape, &nodes, &lw, rng)?;
            tape.constant(draws)
        };
        let keep: Vec<f64> = batch.present[m].iter().map(|&p| if p { 1.0 } else { 0.0 }).collect();
        let keep = tape.constant(Tensor::new(vec![n, 1], keep)?);
        let observed = tape.mul(enc[m], keep)?;
        let s = tape.constant(scatter_matrix(n, &absent));
        let placed = tape.matmul(s, imputed)?;
        z[m] = tape.add(observed, placed)?;
    }
    let steps: Vec<Var> = cfg.fusion_order().iter().map(|&m| z[m]).collect();
    let fused = fuse(tape, vars, cfg, &steps)?;
    let y_hat = classify(tape, vars, fused)?;
    Ok(Forward { y_hat, z })
}

/// Named tensors plus the run configuration that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Configuration echo as one line of JSON.
    pub config: String,
    pub params: ParamSet,
}

impl Checkpoint {
    /// Text container: magic line, config line, then one header line and one
    /// value line per tensor. Values use the shortest round-trip notation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "config {}", self.config);
        let _ = writeln!(s, "tensors {}", self.params.len());
        for (name, t) in &self.params {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(s, "tensor {name} {} {}", t.ndim(), dims.join(" "));
            let vals: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::DataFormat {
            file: "checkpoint".into(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, l)) if l == CHECKPOINT_MAGIC => {}
            _ => return Err(bad(1, "missing CMCM-CKPT-1 header")),
        }
        let (ln, l) = lines.next().ok_or_else(|| bad(2, "missing config line"))?;
        let config = l.strip_prefix("config ").ok_or_else(|| bad(ln, "expected config"))?.to_string();
        let (ln, l) = lines.next().ok_or_else(|| bad(3, "missing tensor count"))?;
        let count: usize = l
            .strip_prefix("tensors ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| bad(ln, "expected tensor count"))?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let (ln, head) = lines.next().ok_or_else(|| bad(0, "truncated"))?;
            let parts: Vec<&str> = head.split(' ').collect();
            if parts.len() < 3 || parts[0] != "tensor" {
                return Err(bad(ln, "expected tensor header"));
            }
            let ndim: usize = parts[2].parse().map_err(|_| bad(ln, "bad rank"))?;
            if parts.len() != 3 + ndim {
                return Err(bad(ln, "rank does not match dims"));
            }
            let shape: Vec<usize> = parts[3..]
                .iter()
                .map(|p| p.parse().map_err(|_| bad(ln, "bad dim")))
                .collect::<Result<_>>()?;
            let (ln, body) = lines.next().ok_or_else(|| bad(ln + 1, "missing values"))?;
            let data: Vec<f64> = if body.is_empty() {
                Vec::new()
            } else {
                body.split(' ')
                    .map(|v| v.parse().map_err(|_| bad(ln, "bad value")))
                    .collect::<Result<_>>()?
            };
            let t = Tensor::new(shape, data).map_err(|_| bad(ln, "value count does not match shape"))?;
            params.insert(parts[1].to_string(), t);
        }
        match lines.next() {
            Some((_, "end")) => Ok(Checkpoint { config, params }),
            Some((ln, _)) => Err(bad(ln, "expected end")),
            None => Err(bad(0, "missing end marker")),
        }
    }
}
