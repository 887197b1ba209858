//! Trains the copula-aligned model on the standard synthetic dataset and
//! reports test AUROC/AUPR with bootstrap intervals.
//!
//! `cargo run --release --example train_synthetic [epochs]`
use cmcm::data::{synthesize, SynthSpec};
use cmcm::metrics::{bootstrap_ci, Metric, ScoredSet};
use cmcm::model::ModelConfig;
use cmcm::trainer::{predict, tau_of, train, TrainConfig};

fn main() -> cmcm::Result<()> {
    let epochs = std::env::args().nth(1).map_or(30, |s| s.parse().expect("epochs"));
    let data = synthesize(&SynthSpec::standard(0))?;
    let (tr, va, te) = (&data.splits[0].batch, &data.splits[1].batch, &data.splits[2].batch);
    let mut run = TrainConfig::default().grid_points()[0].clone();
    run.epochs = epochs;
    let out = train(&run, tr, va)?;
    for r in out.history.iter().step_by(5) {
        println!("epoch {:>3} loss {:.4} valid AUROC {:.4} tau {:.4}", r.epoch, r.train_loss, r.valid_auroc, r.tau);
    }
    let params = &out.checkpoint.params;
    println!("best epoch {} (valid AUROC {:.4}), learned tau {:.4}", out.best_epoch, out.best_valid_auroc, tau_of(params, run.family, 2)?);

    let model = ModelConfig::new(vec![8, 8]);
    let scores = predict(&model, &run, params, te, run.seed)?;
    let set = ScoredSet::from_f64(scores, &te.y)?;
    for metric in [Metric::Auroc, Metric::Aupr] {
        let ci = bootstrap_ci(metric, &set, 1000, 0.95, 0)?;
        println!("test {} {:.4} [{:.4}, {:.4}]", metric.name(), ci.point, ci.lo, ci.hi);
    }
    Ok(())
}
