//! Copula alignment against no alignment, and GPS against plain sampling,
//! over a few seeds on the standard dataset. Runs arms in parallel threads.
//!
//! `cargo run --release --example ablation [seeds] [epochs]`
use cmcm::data::{synthesize, SynthSpec};
use cmcm::metrics::{auroc, ScoredSet};
use cmcm::model::ModelConfig;
use cmcm::objective::AlignmentKind;
use cmcm::trainer::{predict, train, TrainConfig};

fn main() -> cmcm::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().expect("integer argument"));
    let seeds = args.next().unwrap_or(3) as u64;
    let epochs = args.next().unwrap_or(40);
    let data = synthesize(&SynthSpec::standard(0))?;
    let (tr, va, te) = (&data.splits[0].batch, &data.splits[1].batch, &data.splits[2].batch);
    let model = ModelConfig::new(vec![8, 8]);
    let arms = [
        ("copula+gps", AlignmentKind::Copula, true),
        ("none+gps", AlignmentKind::None, true),
        ("copula-gps", AlignmentKind::Copula, false),
    ];
    let results: Vec<(u64, &str, f64)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..seeds)
            .flat_map(|seed| arms.iter().map(move |&arm| (seed, arm)))
            .map(|(seed, (name, alignment, gps))| {
                let model = &model;
                s.spawn(move || -> cmcm::Result<(u64, &str, f64)> {
                    let mut run = TrainConfig::default().grid_points()[0].clone();
                    run.seed = seed;
                    run.epochs = epochs;
                    run.alignment = alignment;
                    run.gps = gps;
                    let out = train(&run, tr, va)?;
                    let p = predict(model, &run, &out.checkpoint.params, te, 7)?;
                    Ok((seed, name, auroc(&ScoredSet::from_f64(p, &te.y)?)))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect::<cmcm::Result<_>>()
    })?;
    for (name, _, _) in arms {
        let a: Vec<f64> = results.iter().filter(|r| r.1 == name).map(|r| r.2).collect();
        println!("{name:<11} mean test AUROC {:.4}  per seed {a:.4?}", a.iter().sum::<f64>() / a.len() as f64);
    }
    Ok(())
}
