//! Picks a memory subset whose mean matches the full candidate mean, by the
//! lasso relaxation and by exhaustive search, then compares it with a
//! reservoir buffer.

use deepccg::memory::{
    brute_force_select, kl_isotropic, lasso_select_indices, mean_gap, IsotropicGaussian, Reservoir, SelectionConfig,
};
use deepccg::linalg::{mean_of, mean_of_subset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> deepccg::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let candidates: Vec<Vec<f64>> = (0..12)
        .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let m = 4;
    let cfg = SelectionConfig::default();

    let lasso = lasso_select_indices(&candidates, m, &cfg);
    let best = brute_force_select(&candidates, m)?;
    println!("lasso picks {lasso:?}, gap {:.5}", mean_gap(&candidates, &lasso));
    println!("exhaustive  {best:?}, gap {:.5}", mean_gap(&candidates, &best));

    // The KL between the induced posteriors ranks subsets like the gap does.
    let full_mean = mean_of(&candidates);
    let full = IsotropicGaussian { mean: &full_mean, var_scale: 1.0 / candidates.len() as f64 };
    for subset in [&lasso, &best] {
        let sub_mean = mean_of_subset(&candidates, subset);
        let kl = kl_isotropic(IsotropicGaussian { mean: &sub_mean, var_scale: 1.0 / m as f64 }, full)?;
        println!("KL(subset {subset:?} || all) = {kl:.5}");
    }

    let stream_len = 1000;
    let mut reservoir = Reservoir::new(10);
    for item in 0..stream_len {
        reservoir.offer(item, &mut rng);
    }
    println!(
        "\nreservoir of 10 after {} items: {:?}",
        reservoir.seen(),
        reservoir.items()
    );
    Ok(())
}
