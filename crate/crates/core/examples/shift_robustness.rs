//! Adds i.i.d. noise to every stored embedding and compares the observed
//! mean gap with its expected value.

use deepccg::memory::{shift_expectation_check, ShiftNoise};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> deepccg::Result<()> {
    let candidates: Vec<Vec<f64>> = [0.0, 2.0, 4.0, 6.0].iter().map(|&x| vec![x]).collect();
    let subset = [1, 2];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for noise in [
        ShiftNoise::Gaussian { mean: 0.0, var: 1.0 },
        ShiftNoise::Uniform { mean: 0.0, var: 1.0 },
        ShiftNoise::Gaussian { mean: 3.0, var: 0.5 },
    ] {
        let r = shift_expectation_check(&candidates, &subset, noise, 100_000, &mut rng)?;
        println!(
            "{noise:?}: empirical {:.4} ± {:.4}, expected {:.4} ({:.2} std errs)",
            r.empirical_mean,
            r.std_err,
            r.predicted,
            r.z_score()
        );
    }
    Ok(())
}
