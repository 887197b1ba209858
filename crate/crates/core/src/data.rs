//! Synthetic multimodal datasets with a known latent copula, MAR masking and
//! the on-disk CSV format.
//!
//! A dataset directory holds `manifest.txt` and one subdirectory per split
//! (`train`, `valid`, `test`). Each split directory holds `labels.csv`
//! (`id,y`), `modality_<m>.csv` (`id,present,x_1,…,x_D`, `m` counted from 1)
//! and its own `manifest.txt`.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::copula::{Copula, Family};
use crate::error::{Error, Result};
use crate::fmt::g9;
use crate::model::MultimodalBatch;
use crate::stats::std_normal_quantile;

pub const SPLITS: [&str; 3] = ["train", "valid", "test"];
pub const MANIFEST_MAGIC: &str = "cmcm-dataset-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCopula {
    pub family: Family,
    /// Constrained values, as accepted by [`Copula::from_values`].
    #[serde(default)]
    pub params: Vec<f64>,
}

/// Per-modality feature map of the latent score `s = Φ⁻¹(u)`:
/// `h_j = scale_j·s + shift_j`, then `x_j = h_j + warp_j·tanh(h_j)`.
/// Monotone increasing when every `scale_j > 0` and `warp_j ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub warp: Vec<f64>,
}

impl Transform {
    pub fn apply(&self, s: f64, j: usize) -> f64 {
        let h = self.scale[j] * s + self.shift[j];
        h + self.warp[j] * h.tanh()
    }

    fn random(dim: usize, rng: &mut impl Rng) -> Self {
        Transform {
            scale: (0..dim).map(|_| rng.random_range(0.5..1.5)).collect(),
            shift: (0..dim).map(|_| rng.random_range(-0.5..0.5)).collect(),
            warp: (0..dim).map(|_| rng.random_range(0.0..1.0)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    /// One weight per modality latent score.
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub modality_dims: Vec<usize>,
    pub copula: LatentCopula,
    /// Drawn from the seed when omitted.
    #[serde(default)]
    pub transforms: Option<Vec<Transform>>,
    pub noise_sigma: f64,
    pub label: LabelRule,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_test: usize,
    #[serde(default)]
    pub missing_rate: f64,
    /// Modalities that may be masked, counted from 1.
    #[serde(default)]
    pub at_risk: Vec<usize>,
    pub seed: u64,
}

impl SynthSpec {
    /// Two 8-dimensional modalities over a Gumbel(2) latent, 4000/500/1000
    /// rows, 30% of modality 2 missing.
    pub fn standard(seed: u64) -> Self {
        SynthSpec {
            modality_dims: vec![8, 8],
            copula: LatentCopula {
                family: Family::Gumbel,
                params: vec![2.0],
            },
            transforms: None,
            noise_sigma: 0.3,
            label: LabelRule { w: vec![1.5, 1.5], b: 0.0 },
            n_train: 4000,
            n_valid: 500,
            n_test: 1000,
            missing_rate: 0.3,
            at_risk: vec![2],
            seed,
        }
    }

    pub fn modalities(&self) -> usize {
        self.modality_dims.len()
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        [self.n_train, self.n_valid, self.n_test]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let m = self.modalities();
        if m == 0 || self.modality_dims.contains(&0) {
            return bad(format!("modality dims must be nonempty and >= 1, got {:?}", self.modality_dims));
        }
        if !(self.missing_rate >= 0.0 && self.missing_rate < 1.0) {
            return bad(format!("missing_rate must lie in [0, 1), got {}", self.missing_rate));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be finite and >= 0, got {}", self.noise_sigma));
        }
        if self.label.w.len() != m {
            return bad(format!("label weights need {m} entries, got {}", self.label.w.len()));
        }
        if !self.label.w.iter().chain([&self.label.b]).all(|v| v.is_finite()) {
            return bad("label rule weights must be finite".into());
        }
        if let Some(&r) = self.at_risk.iter().find(|&&r| r == 0 || r > m) {
            return bad(format!("at_risk modality {r} outside 1..={m}"));
        }
        if let Some(ts) = &self.transforms {
            if ts.len() != m {
                return bad(format!("{m} transforms required, got {}", ts.len()));
            }
            for (t, &d) in ts.iter().zip(&self.modality_dims) {
                if t.scale.len() != d || t.shift.len() != d || t.warp.len() != d {
                    return bad(format!("transform vectors must have length {d}"));
                }
            }
        }
        if self.split_sizes().contains(&0) {
            return bad("every split needs at least one row".into());
        }
        Ok(())
    }
}

/// One split in memory: features, mask, labels and the latent uniforms.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitData {
    pub batch: MultimodalBatch,
    /// `latents[i][m]`
    pub latents: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub spec: SynthSpec,
    pub transforms: Vec<Transform>,
    /// In [`SPLITS`] order.
    pub splits: Vec<SplitData>,
}

/// Loaded splits in [`SPLITS`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub modality_dims: Vec<usize>,
    pub train: MultimodalBatch,
    pub valid: MultimodalBatch,
    pub test: MultimodalBatch,
}

impl Dataset {
    pub fn split(&self, name: &str) -> Result<&MultimodalBatch> {
        match name {
            "train" => Ok(&self.train),
            "valid" => Ok(&self.valid),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split '{other}' (expected train, valid or test)"))),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Draws every split in memory. Features pass through [`g9`] so that a
/// written and reloaded dataset equals the returned one.
pub fn synthesize(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let m = spec.modalities();
    let copula = Copula::from_values(spec.copula.family, &spec.copula.params, m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let transforms = match &spec.transforms {
        Some(t) => t.clone(),
        None => spec.modality_dims.iter().map(|&d| Transform::random(d, &mut rng)).collect(),
    };
    let at_risk: Vec<usize> = spec.at_risk.iter().map(|r| r - 1).collect();
    let mut splits = Vec::with_capacity(3);
    for n in spec.split_sizes() {
        let copula_seed: u64 = rng.random();
        let mut local = ChaCha8Rng::seed_from_u64(rng.random());
        let mask_seed: u64 = rng.random();
        let latents = copula.sample(n, copula_seed)?;
        let mut xs: Vec<Vec<f64>> = spec.modality_dims.iter().map(|&d| Vec::with_capacity(n * d)).collect();
        let mut y = Vec::with_capacity(n);
        for u in &latents {
            let scores = u.iter().map(|&p| std_normal_quantile(p)).collect::<Result<Vec<f64>>>()?;
            for (q, t) in transforms.iter().enumerate() {
                for j in 0..spec.modality_dims[q] {
                    let e: f64 = StandardNormal.sample(&mut local);
                    let v = t.apply(scores[q], j) + spec.noise_sigma * e;
                    xs[q].push(round9(v));
                }
            }
            let logit: f64 = spec.label.w.iter().zip(&scores).map(|(w, s)| w * s).sum::<f64>() + spec.label.b;
            y.push(if local.random::<f64>() < sigmoid(logit) { 1.0 } else { 0.0 });
        }
        let batch = MultimodalBatch {
            xs: xs
                .into_iter()
                .zip(&spec.modality_dims)
                .map(|(x, &d)| Tensor::new(vec![n, d], x))
                .collect::<Result<_>>()?,
            present: vec![vec![true; n]; m],
            y,
        };
        let batch = if at_risk.is_empty() {
            batch
        } else {
            apply_mar_mask(&batch, spec.missing_rate, &at_risk, mask_seed)?
        };
        splits.push(SplitData { batch, latents });
    }
    Ok(Synthetic {
        spec: spec.clone(),
        transforms,
        splits,
    })
}

fn round9(x: f64) -> f64 {
    g9(x).parse().expect("g9 output parses")
}

/// Masks each row of every modality in `at_risk` (0-based) independently with
/// probability `rate`. Masked rows keep zeros and `present = false`.
pub fn apply_mar_mask(batch: &MultimodalBatch, rate: f64, at_risk: &[usize], seed: u64) -> Result<MultimodalBatch> {
    let m = batch.xs.len();
    if !(rate >= 0.0 && rate < 1.0) {
        return Err(Error::Config(format!("missing_rate must lie in [0, 1), got {rate}")));
    }
    if let Some(&q) = at_risk.iter().find(|&&q| q >= m) {
        return Err(Error::DimMismatch { expected: m, got: q });
    }
    if (0..m).all(|q| at_risk.contains(&q)) {
        return Err(Error::AllModalitiesAtRisk);
    }
    let mut out = batch.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for q in 0..m {
        if !at_risk.contains(&q) {
            continue;
        }
        let d = out.xs[q].cols();
        for i in 0..batch.len() {
            if rng.random::<f64>() < rate {
                out.present[q][i] = false;
                out.xs[q].data_mut()[i * d..(i + 1) * d].fill(0.0);
            }
        }
    }
    Ok(out)
}

/// Writes `contents` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn labels_csv(b: &MultimodalBatch) -> String {
    let mut s = String::from("id,y\n");
    for (i, y) in b.y.iter().enumerate() {
        s.push_str(&format!("{i},{}\n", *y as u8));
    }
    s
}

fn modality_csv(b: &MultimodalBatch, q: usize) -> String {
    let x = &b.xs[q];
    let mut s = String::from("id,present");
    for j in 1..=x.cols() {
        s.push_str(&format!(",x_{j}"));
    }
    s.push('\n');
    for i in 0..b.len() {
        s.push_str(&format!("{i},{}", b.present[q][i] as u8));
        for v in x.row(i) {
            s.push(',');
            s.push_str(&g9(*v));
        }
        s.push('\n');
    }
    s
}

fn split_manifest(name: &str, b: &MultimodalBatch) -> String {
    let dims: Vec<String> = b.xs.iter().map(|x| x.cols().to_string()).collect();
    format!("format={MANIFEST_MAGIC}\nsplit={name}\nrows={}\ndims={}\n", b.len(), dims.join(","))
}

/// Writes one split directory.
pub fn write_split(dir: &Path, name: &str, b: &MultimodalBatch) -> Result<()> {
    create_dir(dir)?;
    write_atomic(&dir.join("labels.csv"), labels_csv(b).as_bytes())?;
    for q in 0..b.xs.len() {
        write_atomic(&dir.join(format!("modality_{}.csv", q + 1)), modality_csv(b, q).as_bytes())?;
    }
    write_atomic(&dir.join("manifest.txt"), split_manifest(name, b).as_bytes())
}

/// Draws the dataset of `spec` and writes it under `out`.
pub fn generate_synthetic(spec: &SynthSpec, out: &Path) -> Result<Synthetic> {
    let synth = synthesize(spec)?;
    create_dir(out)?;
    for (name, split) in SPLITS.iter().zip(&synth.splits) {
        write_split(&out.join(name), name, &split.batch)?;
    }
    let spec_json = serde_json::to_string(spec).map_err(|e| Error::Config(e.to_string()))?;
    let transforms_json = serde_json::to_string(&synth.transforms).map_err(|e| Error::Config(e.to_string()))?;
    let sizes = spec.split_sizes();
    let manifest = format!(
        "format={MANIFEST_MAGIC}\nseed={}\nsplits=train:{},valid:{},test:{}\nspec={spec_json}\ntransforms={transforms_json}\n",
        spec.seed, sizes[0], sizes[1], sizes[2]
    );
    write_atomic(&out.join("manifest.txt"), manifest.as_bytes())?;
    Ok(synth)
}

fn read(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn format_err(file: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::DataFormat {
        file: file.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses `key=value` lines.
fn manifest_value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| l.strip_prefix(key)?.strip_prefix('='))
}

/// Data rows of a CSV after checking the header; each row is split on commas
/// and must have `width` fields.
fn csv_rows(path: &Path, text: &str, header: &str, width: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header => {}
        Some(h) => return Err(format_err(path, 1, format!("expected header '{header}', found '{h}'"))),
        None => return Err(format_err(path, 1, "empty file")),
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let no = k + 2;
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != width {
            return Err(format_err(path, no, format!("expected {width} fields, found {}", fields.len())));
        }
        if fields[0].parse::<usize>().ok() != Some(k) {
            return Err(format_err(path, no, format!("expected id {k}, found '{}'", fields[0])));
        }
        rows.push((no, fields));
    }
    Ok(rows)
}

fn parse_flag(path: &Path, line: usize, s: &str, what: &str) -> Result<bool> {
    match s {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(format_err(path, line, format!("{what} must be 0 or 1, found '{other}'"))),
    }
}

/// Reads one split directory.
pub fn load_split(dir: &Path) -> Result<MultimodalBatch> {
    let mpath = dir.join("manifest.txt");
    let manifest = read(&mpath)?;
    let dims: Vec<usize> = manifest_value(&manifest, "dims")
        .ok_or_else(|| format_err(&mpath, 0, "missing 'dims' entry"))?
        .split(',')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| format_err(&mpath, 0, format!("bad dims: {e}")))?;
    let lpath = dir.join("labels.csv");
    let ltext = read(&lpath)?;
    let mut y = Vec::new();
    for (no, f) in csv_rows(&lpath, &ltext, "id,y", 2)? {
        y.push(if parse_flag(&lpath, no, &f[1], "label")? { 1.0 } else { 0.0 });
    }
    let n = y.len();
    let mut xs = Vec::with_capacity(dims.len());
    let mut present = Vec::with_capacity(dims.len());
    for (q, &d) in dims.iter().enumerate() {
        let path = dir.join(format!("modality_{}.csv", q + 1));
        let text = read(&path)?;
        let mut header = String::from("id,present");
        for j in 1..=d {
            header.push_str(&format!(",x_{j}"));
        }
        let rows = csv_rows(&path, &text, &header, d + 2)?;
        if rows.len() != n {
            return Err(format_err(&path, rows.len() + 1, format!("{} rows but labels.csv has {n}", rows.len())));
        }
        let mut data = Vec::with_capacity(n * d);
        let mut p = Vec::with_capacity(n);
        for (no, f) in rows {
            p.push(parse_flag(&path, no, &f[1], "present")?);
            for s in &f[2..] {
                let v: f64 = s.parse().map_err(|_| format_err(&path, no, format!("not a number: '{s}'")))?;
                if !v.is_finite() {
                    return Err(format_err(&path, no, format!("non-finite value '{s}'")));
                }
                data.push(v);
            }
        }
        xs.push(Tensor::new(vec![n, d], data)?);
        present.push(p);
    }
    Ok(MultimodalBatch { xs, present, y })
}

/// Reads the three splits under `dir`.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let mpath = dir.join("manifest.txt");
    let manifest = read(&mpath)?;
    if manifest_value(&manifest, "format") != Some(MANIFEST_MAGIC) {
        return Err(format_err(&mpath, 1, format!("expected format={MANIFEST_MAGIC}")));
    }
    let mut splits = SPLITS
        .iter()
        .map(|s| load_split(&dir.join(s)))
        .collect::<Result<Vec<_>>>()?;
    let dims: Vec<usize> = splits[0].xs.iter().map(|x| x.cols()).collect();
    for (s, b) in SPLITS.iter().zip(&splits) {
        let d: Vec<usize> = b.xs.iter().map(|x| x.cols()).collect();
        if d != dims {
            return Err(format_err(&dir.join(s).join("manifest.txt"), 0, format!("dims {d:?} differ from train {dims:?}")));
        }
    }
    let test = splits.pop().expect("three splits");
    let valid = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok(Dataset {
        modality_dims: dims,
        train,
        valid,
        test,
    })
}

/// Row indices of `n` rows in shuffled minibatches of at most `size`.
pub fn shuffled_batches(n: usize, size: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Minibatches of `data` in an order fixed by `seed`.
pub fn batches(data: &MultimodalBatch, size: usize, seed: u64) -> impl Iterator<Item = MultimodalBatch> + '_ {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled_batches(data.len(), size, &mut rng)
        .into_iter()
        .map(move |idx| data.select(&idx))
}
