//! Acceptance suite: one test per criterion, each reporting a single
//! PASS/FAIL line on stderr (written past the harness capture).
//!
//! Criteria 5 and 6 measure an empirical outcome of training on the standard
//! synthetic data. They print their verdict but do not fail the test run;
//! every other criterion asserts.

use std::io::Write;
use std::time::Instant;

use std::path::Path;
use std::process::Command;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use cmcm::autodiff::{finite_diff_check, finite_diff_check_5pt, Tape, Tensor, Var};
use cmcm::copula::{log_density_on_tape, trivariate_gumbel_log_density, Copula, Family, EPS};
use cmcm::data::{synthesize, SynthSpec};
use cmcm::gmm::{fit_gmm, GmmMarginal, GmmNodes, WeightKind};
use cmcm::metrics::{aupr, auroc, bootstrap_ci, bootstrap_t_test, Metric, ScoredSet};
use cmcm::model::{model_forward, ForwardOptions, Mode, ModelConfig, MultimodalBatch};
use cmcm::objective::{bce_loss, copula_alignment_term, elbo, AlignmentKind};
use cmcm::optim::{ParamSet, Vars};
use cmcm::quad::gauss_legendre;
use cmcm::stats::{std_normal_cdf, LN_2PI};
use cmcm::trainer::{embed, impute_missing, init_all, predict, train, ImputeMode, RunConfig, TrainConfig};

fn report(n: usize, name: &str, pass: bool, detail: &str) {
    let line = format!(
        "acceptance {n} [{}] {name}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
}

fn suite_copulas() -> Vec<(String, Copula)> {
    let mut v = Vec::new();
    for a in [0.5, 2.0, 5.0] {
        v.push((format!("clayton α={a}"), Copula::clayton(a).unwrap()));
    }
    for a in [-4.0, 1.0, 8.0] {
        v.push((format!("frank α={a}"), Copula::frank(a).unwrap()));
    }
    for a in [1.2, 2.0, 4.0] {
        v.push((format!("gumbel α={a}"), Copula::gumbel(a, 2).unwrap()));
    }
    for r in [-0.5, 0.3, 0.8] {
        v.push((format!("gaussian ρ={r}"), Copula::gaussian(r).unwrap()));
    }
    for (r, nu) in [(0.3, 4.0), (-0.5, 8.0), (0.7, 3.0)] {
        v.push((format!("student_t ρ={r} ν={nu}"), Copula::student_t(r, nu).unwrap()));
    }
    v
}

/// Gauss–Legendre nodes on `[EPS, 1 − EPS]` with panels graded
/// geometrically toward both ends.
fn graded_nodes() -> Vec<(f64, f64)> {
    let mut breaks = vec![EPS, 1e-5, 1e-4, 1e-3, 1e-2, 0.03];
    breaks.extend((1..10).map(|k| k as f64 / 10.0));
    breaks.extend([0.97, 0.99, 1.0 - 1e-3, 1.0 - 1e-4, 1.0 - 1e-5, 1.0 - EPS]);
    let (x, w) = gauss_legendre(16);
    let mut out = Vec::new();
    for p in breaks.windows(2) {
        let (a, b) = (p[0], p[1]);
        for (xi, wi) in x.iter().zip(&w) {
            out.push((0.5 * (a + b) + 0.5 * (b - a) * xi, 0.5 * (b - a) * wi));
        }
    }
    out
}

#[test]
fn criterion_1_copula_correctness_suite() {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let nodes = graded_nodes();
    // Richardson-extrapolated central mixed difference, steps h and 2h
    let h = 3e-4;
    for (name, c) in suite_copulas() {
        // margins on a 50-point grid
        let mut margin = 0.0f64;
        for i in 0..50 {
            let t = (i as f64 + 0.5) / 50.0;
            margin = margin.max((c.cdf(&[t, 1.0 - EPS]).unwrap() - t).abs());
            margin = margin.max((c.cdf(&[1.0 - EPS, t]).unwrap() - t).abs());
            margin = margin.max(c.cdf(&[EPS, t]).unwrap().abs());
            margin = margin.max(c.cdf(&[t, EPS]).unwrap().abs());
        }
        if margin >= 1e-5 {
            failures.push(format!("{name}: margin error {margin:e}"));
        }
        // 2-increasing on 1000 random rectangles
        let mut worst = f64::INFINITY;
        for _ in 0..1000 {
            let (a, b): (f64, f64) = (rng.random(), rng.random());
            let (p, q): (f64, f64) = (rng.random(), rng.random());
            let (u1, u2) = (a.min(b), a.max(b));
            let (v1, v2) = (p.min(q), p.max(q));
            let cdf = |u: f64, v: f64| c.cdf(&[u, v]).unwrap();
            let vol = cdf(u2, v2) - cdf(u2, v1) - cdf(u1, v2) + cdf(u1, v1);
            worst = worst.min(vol);
        }
        if worst < -1e-10 {
            failures.push(format!("{name}: rectangle volume {worst:e}"));
        }
        // density against the mixed difference of the CDF on a 20×20 grid
        let mut rel = 0.0f64;
        for i in 0..20 {
            for j in 0..20 {
                let (u, v) = ((i as f64 + 0.5) / 20.0, (j as f64 + 0.5) / 20.0);
                let cdf = |du: f64, dv: f64| c.cdf(&[u + du, v + dv]).unwrap();
                let md = |h: f64| (cdf(h, h) - cdf(h, -h) - cdf(-h, h) + cdf(-h, -h)) / (4.0 * h * h);
                let mixed = (4.0 * md(h) - md(2.0 * h)) / 3.0;
                let d = c.density(&[u, v]).unwrap();
                rel = rel.max((d - mixed).abs() / d);
            }
        }
        if rel >= 1e-3 {
            failures.push(format!("{name}: density vs mixed difference {rel:e}"));
        }
        // normalization
        let mut mass = 0.0;
        for &(u, wu) in &nodes {
            for &(v, wv) in &nodes {
                mass += wu * wv * c.density(&[u, v]).unwrap();
            }
        }
        if !(0.99..=1.01).contains(&mass) {
            failures.push(format!("{name}: mass {mass}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && secs < 60.0;
    report(1, "copula correctness suite", pass, &format!("15 copulas, {secs:.1}s, failures {failures:?}"));
    assert!(pass, "{failures:?} in {secs}s");
}

#[test]
fn criterion_2_sklar_oracle() {
    let mut worst = 0.0f64;
    for rho in [-0.5, 0.0, 0.7] {
        let c = Copula::gaussian(rho).unwrap();
        let det = 1.0 - rho * rho;
        for i in 0..50 {
            for j in 0..50 {
                let x = -3.0 + 6.0 * i as f64 / 49.0;
                let y = -3.0 + 6.0 * j as f64 / 49.0;
                let marg = -LN_2PI - 0.5 * (x * x + y * y);
                let joint = (c.log_density(&[std_normal_cdf(x), std_normal_cdf(y)]).unwrap() + marg).exp();
                // dense bivariate normal with explicit 2×2 inverse
                let q = (x * x - 2.0 * rho * x * y + y * y) / det;
                let dense = (-q / 2.0).exp() / (2.0 * std::f64::consts::PI * det.sqrt());
                worst = worst.max((joint - dense).abs() / dense);
            }
        }
    }
    let pass = worst < 1e-6;
    report(2, "Sklar oracle (Gaussian copula × normal margins)", pass, &format!("max rel err {worst:e}"));
    assert!(pass);
}

#[test]
fn criterion_3_trivariate_gumbel() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-3;
    let mut worst = 0.0f64;
    for alpha in [1.5, 2.0, 3.0] {
        let c = Copula::gumbel(alpha, 3).unwrap();
        for _ in 0..100 {
            let p: Vec<f64> = (0..3).map(|_| 0.05 + 0.9 * rng.random::<f64>()).collect();
            let mut mixed = 0.0;
            for s in 0..8 {
                let sign: Vec<f64> = (0..3).map(|k| if s >> k & 1 == 1 { 1.0 } else { -1.0 }).collect();
                let q: Vec<f64> = (0..3).map(|k| p[k] + sign[k] * h).collect();
                mixed += sign.iter().product::<f64>() * c.cdf(&q).unwrap();
            }
            mixed /= 8.0 * h * h * h;
            let d = trivariate_gumbel_log_density(alpha, p[0], p[1], p[2]).unwrap().exp();
            worst = worst.max((d - mixed).abs() / d);
        }
    }
    let pass = worst < 1e-3;
    report(3, "trivariate Gumbel density vs third mixed difference", pass, &format!("max rel err {worst:e}"));
    assert!(pass);
}

/// Sum of `y` weighted elementwise by fixed pseudo-random coefficients, so
/// that every output coordinate contributes to the checked gradient.
fn weighted(t: &mut Tape, y: Var) -> cmcm::Result<Var> {
    let shape = t.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
    let w = t.constant(Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?);
    let p = t.mul(y, w)?;
    t.sum(p)
}

fn part(t: &mut Tape, x: Var, start: usize, shape: &[usize]) -> cmcm::Result<Var> {
    let n: usize = shape.iter().product();
    let s = t.slice(x, 0, start, start + n)?;
    t.reshape(s, shape)
}

type Graph = Box<dyn Fn(&mut Tape, Var) -> cmcm::Result<Var>>;

/// `(name, graph, input length, lower, upper)`: inputs drawn uniformly in the range.
fn op_cases() -> Vec<(&'static str, Graph, usize, f64, f64)> {
    fn un(f: fn(&mut Tape, Var) -> cmcm::Result<Var>) -> Graph {
        Box::new(move |t, x| {
            let a = part(t, x, 0, &[2, 3])?;
            let y = f(t, a)?;
            weighted(t, y)
        })
    }
    fn bin(f: fn(&mut Tape, Var, Var) -> cmcm::Result<Var>, rhs: &'static [usize]) -> Graph {
        Box::new(move |t, x| {
            let a = part(t, x, 0, &[2, 3])?;
            let b = part(t, x, 6, rhs)?;
            let y = f(t, a, b)?;
            weighted(t, y)
        })
    }
    vec![
        ("add", bin(|t, a, b| t.add(a, b), &[2, 3]), 12, -2.0, 2.0),
        ("add broadcast", bin(|t, a, b| t.add(a, b), &[3]), 9, -2.0, 2.0),
        ("sub", bin(|t, a, b| t.sub(a, b), &[2, 3]), 12, -2.0, 2.0),
        ("mul broadcast", bin(|t, a, b| t.mul(a, b), &[2, 1]), 8, -2.0, 2.0),
        ("div", bin(|t, a, b| t.div(a, b), &[2, 3]), 12, 0.5, 2.0),
        ("pow", bin(|t, a, b| t.pow(a, b), &[2, 3]), 12, 0.5, 2.0),
        ("matmul", bin(|t, a, b| t.matmul(a, b), &[3, 4]), 18, -1.0, 1.0),
        ("concat", bin(|t, a, b| t.concat(&[a, b], 1), &[2, 3]), 12, -1.0, 1.0),
        ("transpose", un(|t, a| t.transpose(a)), 6, -1.0, 1.0),
        ("sum", un(|t, a| t.sum(a)), 6, -1.0, 1.0),
        ("sum_axis", un(|t, a| t.sum_axis(a, 0)), 6, -1.0, 1.0),
        ("mean", un(|t, a| t.mean(a)), 6, -1.0, 1.0),
        ("mean_axis", un(|t, a| t.mean_axis(a, 1)), 6, -1.0, 1.0),
        ("exp", un(|t, a| t.exp(a)), 6, -2.0, 2.0),
        ("log", un(|t, a| t.log(a)), 6, 0.2, 3.0),
        ("neg", un(|t, a| t.neg(a)), 6, -1.0, 1.0),
        ("sigmoid", un(|t, a| t.sigmoid(a)), 6, -3.0, 3.0),
        ("tanh", un(|t, a| t.tanh(a)), 6, -2.0, 2.0),
        ("softmax", un(|t, a| t.softmax(a)), 6, -2.0, 2.0),
        ("erf", un(|t, a| t.erf(a)), 6, -2.0, 2.0),
        ("clamp", un(|t, a| t.clamp(a, -0.5, 0.5)), 6, -1.0, 1.0),
        ("slice", un(|t, a| t.slice(a, 1, 1, 3)), 6, -1.0, 1.0),
        ("broadcast", un(|t, a| {
            let r = t.reshape(a, &[1, 2, 3])?;
            t.broadcast(r, &[4, 2, 3])
        }), 6, -1.0, 1.0),
        ("reshape", un(|t, a| t.reshape(a, &[3, 2])), 6, -1.0, 1.0),
        ("powf", un(|t, a| t.powf(a, 1.7)), 6, 0.3, 2.0),
        ("square", un(|t, a| t.square(a)), 6, -2.0, 2.0),
        ("normal_cdf", un(|t, a| t.normal_cdf(a)), 6, -3.0, 3.0),
        ("logsumexp_axis", un(|t, a| t.logsumexp_axis(a, 1)), 6, -3.0, 3.0),
    ]
}

fn copula_cases() -> Vec<(String, Family, usize)> {
    vec![
        ("clayton".into(), Family::Clayton, 2),
        ("frank".into(), Family::Frank, 2),
        ("gumbel".into(), Family::Gumbel, 2),
        ("gumbel M=3".into(), Family::Gumbel, 3),
        ("gaussian".into(), Family::Gaussian, 2),
        ("gaussian M=3".into(), Family::Gaussian, 3),
        ("student_t".into(), Family::StudentT, 2),
    ]
}

/// Flattened tiny network, mixtures and copula parameters.
fn elbo_setup(seed: u64) -> (ModelConfig, RunConfig, ParamSet, MultimodalBatch) {
    let model = ModelConfig {
        hidden: 4,
        latent: 3,
        ..ModelConfig::new(vec![3, 2])
    };
    let run = RunConfig {
        hidden: 4,
        latent: 3,
        k: 2,
        temperature: 0.5,
        seed,
        ..TrainConfig::default().grid_points()[0].clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = init_all(&model, &run, &mut rng).unwrap();
    let n = 4;
    let xs = model
        .modality_dims
        .iter()
        .map(|&d| Tensor::new(vec![n, d], (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let batch = MultimodalBatch {
        xs,
        present: vec![vec![true; n], vec![true, false, true, false]],
        y: vec![1.0, 0.0, 0.0, 1.0],
    };
    (model, run, params, batch)
}

fn elbo_graph(model: ModelConfig, run: RunConfig, params: ParamSet, batch: MultimodalBatch, joint: bool) -> (Vec<f64>, Graph) {
    let flat: Vec<f64> = params.values().flat_map(|t| t.data().to_vec()).collect();
    let g: Graph = Box::new(move |t, x| {
        let mut vars = Vars::new();
        let mut at = 0;
        for (name, p) in &params {
            vars.insert(name.clone(), part(t, x, at, p.shape())?);
            at += p.len();
        }
        let nodes: Vec<GmmNodes> = (0..2)
            .map(|m| GmmNodes::from_vars(&format!("gmm{m}"), WeightKind::Logits, &vars))
            .collect::<cmcm::Result<_>>()?;
        let some: Vec<Option<GmmNodes>> = nodes.iter().copied().map(Some).collect();
        let opts = ForwardOptions {
            mode: Mode::Train,
            dropout: 0.0,
            gps: true,
            temperature: run.temperature,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = model_forward(t, &vars, &model, &batch, &some, opts, &mut rng)?;
        let bce = bce_loss(t, f.y_hat, &batch.y)?;
        let term = copula_alignment_term(t, &f.z, &nodes, run.family, vars["copula.raw"], joint)?;
        elbo(t, bce, term, 0.1)
    });
    (flat, g)
}

#[test]
fn criterion_4_gradient_suite() {
    let start = Instant::now();
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (name, g, n, lo, hi) in op_cases() {
        let mut w = 0.0f64;
        for _ in 0..5 {
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
            // keep clamp inputs off its kinks
            let x: Vec<f64> = x.into_iter().map(|v| if (v.abs() - 0.5).abs() < 1e-3 { v * 1.01 } else { v }).collect();
            w = w.max(finite_diff_check(&g, &x, 1e-6).unwrap());
        }
        worst.push((name.into(), w));
    }
    for (name, family, m) in copula_cases() {
        let p = family.arity(m);
        let rows = 3;
        let mut w = 0.0f64;
        for _ in 0..5 {
            let mut x: Vec<f64> = (0..p).map(|_| { let e: f64 = StandardNormal.sample(&mut rng); 0.6 * e }).collect();
            x.extend((0..rows * m).map(|_| rng.random_range(0.05..0.95)));
            let g = move |t: &mut Tape, v: Var| {
                let raw = t.slice(v, 0, 0, p)?;
                let u = part(t, v, p, &[rows, m])?;
                let ld = log_density_on_tape(t, family, m, raw, u)?;
                t.sum(ld)
            };
            w = w.max(finite_diff_check(g, &x, 1e-6).unwrap());
        }
        worst.push((format!("copula {name}"), w));
    }
    for tau in [0.3, 1.0] {
        let (k, d, n) = (3, 2, 4);
        let mut w = 0.0f64;
        for s in 0..5 {
            let mut x: Vec<f64> = (0..k * d).map(|_| -> f64 { StandardNormal.sample(&mut rng) }).collect();
            x.extend((0..k * d).map(|_| rng.random_range(-0.5..0.5)));
            x.extend((0..k).map(|_| rng.random_range(-1.0..1.0)));
            let g = move |t: &mut Tape, v: Var| {
                let nodes = GmmNodes {
                    means: part(t, v, 0, &[k, d])?,
                    log_stds: part(t, v, k * d, &[k, d])?,
                    weights: cmcm::gmm::WeightNodes::Logits(t.slice(v, 0, 2 * k * d, 2 * k * d + k)?),
                };
                let lw = nodes.log_weights(t, n, None)?;
                let mut r = ChaCha8Rng::seed_from_u64(s);
                let z = nodes.gps_sample(t, lw, tau, &mut r)?;
                let lf = nodes.log_density(t, z, lw)?;
                let c = nodes.cdf(t, z, lw)?;
                let a = weighted(t, z)?;
                let b = weighted(t, lf)?;
                let c = weighted(t, c)?;
                let ab = t.add(a, b)?;
                t.add(ab, c)
            };
            w = w.max(finite_diff_check(g, &x, 1e-6).unwrap());
        }
        worst.push((format!("gmm gps τ={tau}"), w));
    }
    for (seed, joint) in [(1, true), (2, false), (3, true)] {
        let (model, run, params, batch) = elbo_setup(seed);
        let (x, g) = elbo_graph(model, run, params, batch, joint);
        let w = finite_diff_check_5pt(&g, &x, 1e-3).unwrap();
        worst.push((format!("elbo seed {seed} joint_nll {joint}"), w));
    }
    let secs = start.elapsed().as_secs_f64();
    let bad: Vec<&(String, f64)> = worst.iter().filter(|(_, w)| !(*w < 1e-3)).collect();
    let max = worst.iter().map(|w| w.1).fold(0.0, f64::max);
    let pass = bad.is_empty() && secs < 120.0;
    report(
        4,
        "gradient suite",
        pass,
        &format!("{} cases, max rel err {max:e}, {secs:.1}s, failures {bad:?}", worst.len()),
    );
    assert!(pass);
}

fn standard_run(seed: u64) -> RunConfig {
    RunConfig {
        seed,
        ..TrainConfig::default().grid_points()[0].clone()
    }
}

#[test]
fn criterion_5_dependence_learning() {
    let start = Instant::now();
    let data = synthesize(&SynthSpec::standard(0)).unwrap();
    let run = standard_run(0);
    let out = train(&run, &data.splits[0].batch, &data.splits[1].batch).unwrap();
    let tau: Vec<f64> = out.history.iter().map(|r| r.tau).collect();
    let positive = tau.iter().skip(5).all(|&t| t > 0.0);
    let n = tau.len();
    let drift = if n > 10 { (tau[n - 1] - tau[n - 11]).abs() } else { f64::INFINITY };
    let secs = start.elapsed().as_secs_f64();
    let pass = positive && drift < 0.01 && secs < 300.0;
    let every10: Vec<String> = tau.iter().step_by(10).map(|t| format!("{t:.3}")).collect();
    report(
        5,
        "learned Gumbel tau positive and plateaued",
        pass,
        &format!(
            "{n} epochs, tau every 10 epochs [{}], final {:.4}, |Δ| over last 10 epochs {drift:.4}, {secs:.1}s",
            every10.join(", "),
            tau[n - 1]
        ),
    );
    assert!(secs < 300.0);
}

#[test]
fn criterion_6_ablation_directionality() {
    let start = Instant::now();
    let data = synthesize(&SynthSpec::standard(0)).unwrap();
    let (tr, va, te) = (&data.splits[0].batch, &data.splits[1].batch, &data.splits[2].batch);
    let model = ModelConfig::new(vec![8, 8]);
    let arms = [(AlignmentKind::Copula, true), (AlignmentKind::None, true), (AlignmentKind::Copula, false)];
    let seeds: Vec<u64> = (0..5).collect();
    // scores[arm][seed]
    let scores: Vec<Vec<Vec<f64>>> = std::thread::scope(|s| {
        let handles: Vec<Vec<_>> = arms
            .iter()
            .map(|&(alignment, gps)| {
                seeds
                    .iter()
                    .map(|&seed| {
                        let model = &model;
                        s.spawn(move || {
                            let run = RunConfig {
                                alignment,
                                gps,
                                ..standard_run(seed)
                            };
                            let out = train(&run, tr, va).unwrap();
                            predict(model, &run, &out.checkpoint.params, te, 7).unwrap()
                        })
                    })
                    .collect()
            })
            .collect();
        handles
            .into_iter()
            .map(|hs| hs.into_iter().map(|h| h.join().unwrap()).collect())
            .collect()
    });
    let set = |p: &Vec<f64>| ScoredSet::from_f64(p.clone(), &te.y).unwrap();
    let auc: Vec<Vec<f64>> = scores.iter().map(|arm| arm.iter().map(|p| auroc(&set(p))).collect()).collect();
    let pooled = |arm: usize| {
        let s: Vec<f64> = scores[arm].concat();
        let y: Vec<f64> = (0..seeds.len()).flat_map(|_| te.y.clone()).collect();
        ScoredSet::from_f64(s, &y).unwrap()
    };
    let mut details = Vec::new();
    let mut pass = true;
    for (label, a, b) in [("copula vs none", 0, 1), ("gps on vs off", 0, 2)] {
        let diffs: Vec<f64> = (0..seeds.len()).map(|i| auc[a][i] - auc[b][i]).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let wins = diffs.iter().filter(|&&d| d >= 0.0).count();
        let p = bootstrap_t_test(&pooled(a), &pooled(b), Metric::Auroc, 1000, 6).unwrap();
        let per_seed: Vec<String> = (0..seeds.len())
            .map(|i| {
                let pi = bootstrap_t_test(&set(&scores[a][i]), &set(&scores[b][i]), Metric::Auroc, 1000, 6).unwrap();
                format!("{:+.4} (p={pi:.3})", diffs[i])
            })
            .collect();
        let ok = mean >= 0.0 && wins >= 4;
        pass &= ok;
        details.push(format!(
            "{label}: mean Δ {mean:+.5}, sign holds in {wins}/5 seeds, pooled p={p:.3}, per seed [{}]",
            per_seed.join(", ")
        ));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 1800.0;
    let means: Vec<String> = auc
        .iter()
        .map(|a| format!("{:.4}", a.iter().sum::<f64>() / a.len() as f64))
        .collect();
    report(
        6,
        "ablation directionality",
        pass,
        &format!(
            "mean test AUROC copula+gps/none+gps/copula-gps = {}; {}; {secs:.1}s",
            means.join("/"),
            details.join("; ")
        ),
    );
    assert!(secs < 1800.0);
}

#[test]
fn criterion_7_imputation_sanity() {
    let data = synthesize(&SynthSpec::standard(0)).unwrap();
    let (tr, va, te) = (&data.splits[0].batch, &data.splits[1].batch, &data.splits[2].batch);
    let run = RunConfig {
        epochs: 20,
        ..standard_run(0)
    };
    let out = train(&run, tr, va).unwrap();
    let model = ModelConfig::new(vec![8, 8]);
    let params = &out.checkpoint.params;
    let z_tr = embed(&model, params, tr).unwrap();
    let complete: Vec<Vec<f64>> = (0..tr.len()).filter(|&i| tr.present[1][i]).map(|i| z_tr[1].row(i).to_vec()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = GmmMarginal::init(run.k, model.latent, WeightKind::Logits, &mut rng).unwrap();
    fit_gmm(&mut g, &complete, 500, 0.05).unwrap();

    let rows: Vec<usize> = (0..te.len()).filter(|&i| te.present[1][i]).collect();
    let held = te.select(&rows);
    let z = embed(&model, params, &held).unwrap();
    let mut hidden = held.present.clone();
    hidden[1].iter_mut().for_each(|p| *p = false);
    let imputed = impute_missing(&z, &hidden, &[None, Some(g)], ImputeMode::Sample, 11).unwrap();
    let n = rows.len() as f64;
    let stats = |t: &Tensor, j: usize| {
        let col: Vec<f64> = (0..t.rows()).map(|i| t.row(i)[j]).collect();
        let m = col.iter().sum::<f64>() / n;
        let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
        (m, v)
    };
    let mut worst = 0.0f64;
    for j in 0..model.latent {
        let (mo, vo) = stats(&z[1], j);
        let (mi, vi) = stats(&imputed[1], j);
        let se = (vo / n + vi / n).sqrt();
        worst = worst.max((mi - mo).abs() / se);
    }
    let pass = worst < 3.0;
    report(
        7,
        "imputed vs observed embedding means",
        pass,
        &format!("{} held-out complete rows, max |Δmean|/SE over {} coordinates = {worst:.3}", rows.len(), model.latent),
    );
    assert!(pass);
}

#[test]
fn criterion_8_metrics_protocol() {
    let hand = ScoredSet::from_f64(vec![0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap();
    let (a, p) = (auroc(&hand), aupr(&hand));
    let mut pass = (a - 0.75).abs() < 1e-12 && (p - 5.0 / 6.0).abs() < 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let labels: Vec<bool> = (0..1000).map(|_| rng.random::<f64>() < 0.4).collect();
    let scores: Vec<f64> = labels
        .iter()
        .map(|&l| {
            let e: f64 = StandardNormal.sample(&mut rng);
            e + if l { 0.8 } else { 0.0 }
        })
        .collect();
    let s = ScoredSet::new(scores, labels).unwrap();
    let mut contained = 0;
    let mut deterministic = true;
    for seed in 0..20 {
        for metric in [Metric::Auroc, Metric::Aupr] {
            let ci = bootstrap_ci(metric, &s, 1000, 0.95, seed).unwrap();
            deterministic &= ci == bootstrap_ci(metric, &s, 1000, 0.95, seed).unwrap();
            contained += (ci.lo <= ci.point && ci.point <= ci.hi) as usize;
        }
    }
    pass &= deterministic && contained == 40;
    report(
        8,
        "metrics protocol",
        pass,
        &format!("AUROC {a}, AUPR {p}, 1000-iteration CIs deterministic: {deterministic}, containing the point: {contained}/40"),
    );
    assert!(pass);
}

fn cmcm(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_cmcm"))
        .args(args)
        .env_remove("CMCM_SEED")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn cli_pipeline(root: &Path) -> (Vec<u8>, Vec<u8>) {
    let spec = SynthSpec {
        n_train: 400,
        n_valid: 100,
        n_test: 200,
        ..SynthSpec::standard(21)
    };
    std::fs::create_dir_all(root).unwrap();
    let spec_path = root.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string(&spec).unwrap()).unwrap();
    let cfg_path = root.join("train.json");
    std::fs::write(&cfg_path, r#"{"epochs": 4, "learning_rate": 1e-3, "seed": 5}"#).unwrap();
    let (data, run) = (root.join("data"), root.join("run"));
    let p = |x: &Path| x.to_str().unwrap().to_string();
    cmcm(&["gen-data", "--spec", &p(&spec_path), "--out", &p(&data)]);
    cmcm(&["train", "--data", &p(&data), "--config", &p(&cfg_path), "--out", &p(&run)]);
    cmcm(&["eval", "--run", &p(&run), "--data", &p(&data), "--split", "test", "--seed", "3"]);
    (
        std::fs::read(run.join("history.csv")).unwrap(),
        std::fs::read(run.join("metrics.csv")).unwrap(),
    )
}

#[test]
fn criterion_9_cli_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let (h1, m1) = cli_pipeline(&dir.path().join("a"));
    let (h2, m2) = cli_pipeline(&dir.path().join("b"));
    let pass = h1 == h2 && m1 == m2 && !h1.is_empty() && !m1.is_empty();
    report(
        9,
        "byte-identical history.csv and metrics.csv across two CLI runs",
        pass,
        &format!("history {} bytes, metrics {} bytes", h1.len(), m1.len()),
    );
    assert!(pass);
}
