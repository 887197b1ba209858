//! Fits a diagonal mixture to two-cluster data, then evaluates its density,
//! product-form CDF and relaxed (Gumbel-softmax) samples.
use cmcm::gmm::{fit_gmm, gmm_cdf, gmm_gps_sample, gmm_log_density, GmmMarginal, WeightKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> cmcm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.4).unwrap();
    let data: Vec<Vec<f64>> = (0..600)
        .map(|i| {
            let c = if i % 3 == 0 { -2.0 } else { 1.5 };
            vec![c + noise.sample(&mut rng), c + noise.sample(&mut rng)]
        })
        .collect();

    let mut m = GmmMarginal::init(2, 2, WeightKind::Logits, &mut rng)?;
    let ll = fit_gmm(&mut m, &data, 400, 0.05)?;
    let pi = m.mixture_weights(None)?;
    println!("mean log-likelihood {ll:.4}, weights {pi:.3?}");
    for k in 0..2 {
        let g = m.component(k);
        println!("component {k}: mean {:.3?} std {:.3?}", g.mean, g.std());
    }
    for z in [[-2.0, -2.0], [0.0, 0.0], [1.5, 1.5]] {
        println!("z {z:?}: log f {:.4}  F {:.4}", gmm_log_density(&z, &m, &pi)?, gmm_cdf(&z, &m, &pi)?);
    }
    let logits: Vec<f64> = pi.iter().map(|p| p.ln()).collect();
    for tau in [1.0, 0.1, 0.01] {
        println!("gps sample tau={tau}: {:.3?}", gmm_gps_sample(&m, &logits, tau, 3)?);
    }
    Ok(())
}
