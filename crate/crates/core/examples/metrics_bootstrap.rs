//! AUROC/AUPR with percentile bootstrap intervals and a paired bootstrap
//! t-test between two scorers.
use cmcm::metrics::{bootstrap_ci, bootstrap_t_test, metrics_csv, Metric, MetricRow, ScoredSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> cmcm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let labels: Vec<bool> = (0..800).map(|_| rng.random::<f64>() < 0.3).collect();
    let mut noisy = |shift: f64| -> Vec<f64> {
        labels
            .iter()
            .map(|&l| {
                let e: f64 = StandardNormal.sample(&mut rng);
                e + if l { shift } else { 0.0 }
            })
            .collect()
    };
    let strong = ScoredSet::new(noisy(1.2), labels.clone())?;
    let weak = ScoredSet::new(noisy(0.8), labels.clone())?;

    let mut rows = Vec::new();
    for (task, set) in [("strong", &strong), ("weak", &weak)] {
        for metric in [Metric::Auroc, Metric::Aupr] {
            let interval = bootstrap_ci(metric, set, 1000, 0.95, 1)?;
            rows.push(MetricRow {
                task: task.into(),
                metric,
                interval,
            });
        }
    }
    print!("{}", metrics_csv(&rows));
    let p = bootstrap_t_test(&strong, &weak, Metric::Auroc, 1000, 2)?;
    println!("paired bootstrap t-test on AUROC: p = {p:.4}");
    Ok(())
}
