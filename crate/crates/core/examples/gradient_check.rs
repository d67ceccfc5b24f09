//! Checks both halves of the chain rule: the head's analytic gradient in z
//! and the network's backward pass, each against central differences.

use deepccg::ccg_head::{fit_posteriors, log_predictive, loss_and_grad, Target};
use deepccg::embedding::{backward, finite_diff_grad, forward, init_mlp};

fn main() -> deepccg::Result<()> {
    let conditioning: Vec<(Vec<f64>, usize)> = vec![
        (vec![0.0, 1.0], 0),
        (vec![0.4, 0.8], 0),
        (vec![2.0, -1.0], 1),
        (vec![-1.5, 0.0], 2),
        (vec![-1.0, 0.5], 2),
    ];
    let post = fit_posteriors(conditioning.iter().map(|(z, y)| (z.as_slice(), *y)), 2, 1e6)?;
    let allowed = [0, 1, 2];
    let z = vec![0.3, 0.2];
    let report = loss_and_grad(&post, &[Target { z: &z, y: 0, allowed: &allowed }])?;
    println!("loss {:.6}, analytic d(-log p)/dz {:?}", report.total_loss, report.per_example_dl_dz[0]);
    let h = 1e-6;
    for j in 0..2 {
        let mut up = z.clone();
        let mut down = z.clone();
        up[j] += h;
        down[j] -= h;
        let numeric = (log_predictive(&post, &down, &allowed)?[&0] - log_predictive(&post, &up, &allowed)?[&0]) / (2.0 * h);
        println!("  coordinate {j}: finite difference {numeric:.9}");
    }

    let params = init_mlp(&[3, 8, 8, 2], 1)?;
    let xs = vec![vec![0.5, -1.0, 2.0], vec![1.0, 0.0, -0.5]];
    let loss = |zs: &[Vec<f64>]| zs.iter().flatten().map(|v| v * v).sum::<f64>() / 2.0;
    let (zs, cache) = forward(&params, &xs)?;
    let analytic = backward(&params, &cache, &zs)?.flat();
    let numeric = finite_diff_grad(&params, &xs, loss, 1e-5)?.flat();
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max);
    println!(
        "\nbackward vs finite differences over {} parameters: worst relative error {worst:.2e}",
        analytic.len()
    );
    Ok(())
}
