//! Ranking metrics, percentile bootstrap intervals and the paired bootstrap
//! test.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::fmt::g9;

pub const DEFAULT_ITERS: usize = 1000;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// Scores with binary labels; both classes present.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSet {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::LengthMismatch(scores.len(), labels.len()));
        }
        let pos = labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == labels.len() {
            return Err(Error::SingleClass);
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::domain("scored_set", "NaN score"));
        }
        Ok(ScoredSet { scores, labels })
    }

    /// Labels given as `0.0`/`1.0`.
    pub fn from_f64(scores: Vec<f64>, labels: &[f64]) -> Result<Self> {
        ScoredSet::new(scores, labels.iter().map(|&y| y > 0.5).collect())
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn has_both(labels: &[bool]) -> bool {
        labels.iter().any(|&l| l) && labels.iter().any(|&l| !l)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auroc,
    Aupr,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Auroc => "AUROC",
            Metric::Aupr => "AUPR",
        }
    }

    pub fn eval(self, scores: &[f64], labels: &[bool]) -> f64 {
        match self {
            Metric::Auroc => auroc_raw(scores, labels),
            Metric::Aupr => aupr_raw(scores, labels),
        }
    }
}

fn auroc_raw(scores: &[f64], labels: &[bool]) -> f64 {
    let n = scores.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // midranks over tie blocks
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum_pos += mid;
            }
        }
        i = j + 1;
    }
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let q = n as f64 - p;
    (rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q)
}

fn aupr_raw(scores: &[f64], labels: &[bool]) -> f64 {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // stable: equal scores keep index order
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let p = labels.iter().filter(|&&l| l).count() as f64;
    let mut tp = 0.0;
    let mut ap = 0.0;
    for (k, &i) in idx.iter().enumerate() {
        if labels[i] {
            tp += 1.0;
            ap += tp / (k + 1) as f64 / p;
        }
    }
    ap
}

/// Mann–Whitney statistic with ties counted ½.
pub fn auroc(s: &ScoredSet) -> f64 {
    auroc_raw(&s.scores, &s.labels)
}

/// Average precision over descending-score cut points.
pub fn aupr(s: &ScoredSet) -> f64 {
    aupr_raw(&s.scores, &s.labels)
}

/// Row indices of one resample containing both classes. Returns the number
/// of redraws needed.
fn resample(rng: &mut ChaCha8Rng, labels: &[bool], out: &mut Vec<usize>) -> usize {
    let n = labels.len();
    let mut redraws = 0;
    loop {
        out.clear();
        out.extend((0..n).map(|_| rng.random_range(0..n)));
        let picked: Vec<bool> = out.iter().map(|&i| labels[i]).collect();
        if ScoredSet::has_both(&picked) {
            return redraws;
        }
        redraws += 1;
    }
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interval {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Percentile bootstrap interval over row resamples.
pub fn bootstrap_ci(metric: Metric, s: &ScoredSet, iters: usize, level: f64, seed: u64) -> Result<Interval> {
    if iters == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::domain("bootstrap_ci", format!("iters {iters}, level {level}")));
    }
    let point = metric.eval(&s.scores, &s.labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = Vec::with_capacity(s.len());
    let mut stats = Vec::with_capacity(iters);
    let mut redraws = 0;
    let (mut sc, mut lb) = (Vec::with_capacity(s.len()), Vec::with_capacity(s.len()));
    for _ in 0..iters {
        redraws += resample(&mut rng, &s.labels, &mut idx);
        sc.clear();
        lb.clear();
        sc.extend(idx.iter().map(|&i| s.scores[i]));
        lb.extend(idx.iter().map(|&i| s.labels[i]));
        stats.push(metric.eval(&sc, &lb));
    }
    if redraws > 0 {
        log::debug!("bootstrap_ci: {redraws} single-class resamples redrawn");
    }
    stats.sort_by(f64::total_cmp);
    let a = (1.0 - level) / 2.0;
    Ok(Interval {
        point,
        lo: quantile(&stats, a),
        hi: quantile(&stats, 1.0 - a),
    })
}

/// Two-sided paired bootstrap test of `metric(A) = metric(B)` on shared
/// labels. The observed difference is studentized by the bootstrap standard
/// deviation and referred to a t distribution with `iters − 1` degrees of
/// freedom.
pub fn bootstrap_t_test(a: &ScoredSet, b: &ScoredSet, metric: Metric, iters: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.labels != b.labels {
        return Err(Error::domain("bootstrap_t_test", "score sets must share the label vector"));
    }
    if iters < 2 {
        return Err(Error::domain("bootstrap_t_test", format!("iters {iters}")));
    }
    let observed = metric.eval(&a.scores, &a.labels) - metric.eval(&b.scores, &b.labels);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = Vec::with_capacity(a.len());
    let mut diffs = Vec::with_capacity(iters);
    let (mut sa, mut sb, mut lb) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..iters {
        resample(&mut rng, &a.labels, &mut idx);
        sa.clear();
        sb.clear();
        lb.clear();
        sa.extend(idx.iter().map(|&i| a.scores[i]));
        sb.extend(idx.iter().map(|&i| b.scores[i]));
        lb.extend(idx.iter().map(|&i| a.labels[i]));
        diffs.push(metric.eval(&sa, &lb) - metric.eval(&sb, &lb));
    }
    let mean = diffs.iter().sum::<f64>() / iters as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (iters - 1) as f64;
    let sd = var.sqrt();
    if sd == 0.0 {
        return Ok(if observed == 0.0 { 1.0 } else { 0.0 });
    }
    let t = (observed / sd).abs();
    let dist = StudentsT::new(0.0, 1.0, (iters - 1) as f64).map_err(|e| Error::domain("bootstrap_t_test", e.to_string()))?;
    Ok((2.0 * (1.0 - dist.cdf(t))).clamp(0.0, 1.0))
}

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub task: String,
    pub metric: Metric,
    pub interval: Interval,
}

/// `task,metric,point,lo,hi` with 9 significant digits.
pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("task,metric,point,lo,hi\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.task,
            r.metric.name(),
            g9(r.interval.point),
            g9(r.interval.lo),
            g9(r.interval.hi)
        );
    }
    s
}
