//! Fits class posteriors from embeddings, evaluates the closed-form
//! predictive and compares it with Monte Carlo integration over the means.

use deepccg::ccg_head::{fit_posteriors, log_predictive, predict, predictive_oracle_mc};

fn main() -> deepccg::Result<()> {
    // One-dimensional: class 0 has four points around 0, class 1 a single
    // point at 2. The lone point leaves class 1 with a wide predictive.
    let points: Vec<(Vec<f64>, usize)> = vec![
        (vec![-0.5], 0),
        (vec![0.5], 0),
        (vec![-0.25], 0),
        (vec![0.25], 0),
        (vec![2.0], 1),
    ];
    let post = fit_posteriors(points.iter().map(|(z, y)| (z.as_slice(), *y)), 1, f64::INFINITY)?;
    for c in [0, 1] {
        let p = post.get(c);
        println!(
            "class {c}: mean {:.3}, n {}, mean variance {:.3}, predictive scale {:.3}",
            p.mean[0],
            p.count,
            p.var_scale(),
            p.predictive_scale()
        );
    }

    let z = [1.0];
    let lp = log_predictive(&post, &z, &[0, 1])?;
    let mc = predictive_oracle_mc(&post, &z, &[0, 1], 100_000, 42)?;
    println!("\nat z = 1.0, equidistant from both means:");
    for c in [0, 1] {
        println!(
            "  p(class {c}) closed form {:.4}, Monte Carlo {:.4} ± {:.4}",
            lp[&c].exp(),
            mc.prob[&c],
            mc.std_err[&c]
        );
    }
    println!("  predicted label {}", predict(&post, &z, &[0, 1])?);

    // With a finite prior, classes without data fall back to N(0, a I).
    let finite = fit_posteriors(points.iter().map(|(z, y)| (z.as_slice(), *y)), 1, 1e6)?;
    let unseen = finite.get(7);
    println!(
        "\nunseen class 7 under prior 1e6: mean {:?}, variance {:.1e}",
        unseen.mean,
        unseen.var_scale()
    );
    let three = log_predictive(&finite, &[5.0], &[0, 1, 7])?;
    for (c, l) in &three {
        println!("  p(class {c} | z = 5) = {:.4}", l.exp());
    }
    Ok(())
}
