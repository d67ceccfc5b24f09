//! Fixed-seed oracle suites. Each check reports what it measured against the
//! tolerance it allows.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::ccg_head::{
    fit_posteriors, log_predictive, loss_and_grad, predictive_oracle_mc, ClassPosterior, PosteriorSet, Target,
};
use crate::embedding::{backward, finite_diff_grad, forward, init_mlp, sgd_step};
use crate::error::{Error, Result};
use crate::memory::{
    brute_force_select, kl_isotropic, lasso_select_indices, mean_gap, shift_expectation_check, IsotropicGaussian,
    Reservoir, SelectionConfig, ShiftNoise,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Posterior,
    Predictive,
    Gradient,
    Selection,
    Shift,
    Reservoir,
    All,
}

impl Suite {
    pub const NAMED: [Suite; 6] = [
        Suite::Posterior,
        Suite::Predictive,
        Suite::Gradient,
        Suite::Selection,
        Suite::Shift,
        Suite::Reservoir,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Posterior => "posterior",
            Suite::Predictive => "predictive",
            Suite::Gradient => "gradient",
            Suite::Selection => "selection",
            Suite::Shift => "shift",
            Suite::Reservoir => "reservoir",
            Suite::All => "all",
        }
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::NAMED
            .into_iter()
            .chain([Suite::All])
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown suite {s:?}; expected one of posterior, predictive, gradient, selection, shift, reservoir, all"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: Suite,
    pub name: String,
    pub measured: f64,
    pub bound: Bound,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(suite: Suite, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Check {
            suite,
            name: name.into(),
            measured,
            bound: Bound::AtMost,
            tolerance,
            passed: measured <= tolerance,
        }
    }

    /// Passes when `measured >= tolerance`.
    pub fn at_least(suite: Suite, name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Check {
            suite,
            name: name.into(),
            measured,
            bound: Bound::AtLeast,
            tolerance,
            passed: measured >= tolerance,
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mark = if self.passed { "ok  " } else { "FAIL" };
        let op = match self.bound {
            Bound::AtMost => "<=",
            Bound::AtLeast => ">=",
        };
        write!(
            f,
            "{mark} {:<10} {:<44} measured {:.3e} {op} {:.3e}",
            self.suite.name(),
            self.name,
            self.measured,
            self.tolerance
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SelftestReport {
    pub checks: Vec<Check>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

impl fmt::Display for SelftestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let failed = self.failures().count();
        write!(f, "{} checks, {} failed", self.checks.len(), failed)
    }
}

pub fn run_selftest(suite: Suite) -> Result<SelftestReport> {
    let suites: Vec<Suite> = match suite {
        Suite::All => Suite::NAMED.to_vec(),
        s => vec![s],
    };
    let mut checks = Vec::new();
    for s in suites {
        checks.extend(match s {
            Suite::Posterior => posterior_checks(11)?,
            Suite::Predictive => predictive_checks(12, log_predictive)?,
            Suite::Gradient => gradient_checks(13)?,
            Suite::Selection => selection_checks(14)?,
            Suite::Shift => shift_checks(15)?,
            Suite::Reservoir => reservoir_checks(16)?,
            Suite::All => unreachable!(),
        });
    }
    Ok(SelftestReport { checks })
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Random posterior set with `k` classes of small counts; `z` lands near the
/// class means so that no single class dominates.
pub fn random_posterior_instance(rng: &mut ChaCha8Rng, prior_a: f64) -> (PosteriorSet, Vec<f64>, Vec<usize>) {
    let d = rng.random_range(1..=4);
    let k = rng.random_range(2..=5);
    let posteriors: Vec<ClassPosterior> = (0..k)
        .map(|c| ClassPosterior {
            class_id: c,
            mean: gaussian_vec(rng, d, 1.0),
            count: rng.random_range(1..=4),
            prior_a,
        })
        .collect();
    let anchor = &posteriors[rng.random_range(0..k)].mean;
    let z: Vec<f64> = anchor.iter().map(|m| m + 0.7 * rng.sample::<f64, _>(StandardNormal)).collect();
    let allowed = (0..k).collect();
    let set = PosteriorSet::from_posteriors(d, prior_a, posteriors).expect("well-formed posteriors");
    (set, z, allowed)
}

/// The two-class, one-dimensional case whose class-0 probability is 0.5212.
pub fn worked_posterior() -> PosteriorSet {
    let cp = |class_id, m: f64, count| ClassPosterior {
        class_id,
        mean: vec![m],
        count,
        prior_a: f64::INFINITY,
    };
    PosteriorSet::from_posteriors(1, f64::INFINITY, vec![cp(0, 0.0, 4), cp(1, 2.0, 1)]).expect("valid")
}

pub fn posterior_checks(seed: u64) -> Result<Vec<Check>> {
    let s = Suite::Posterior;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    let mut worst_finite = 0.0f64;
    for _ in 0..60 {
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let mut points = Vec::new();
        for c in 0..k {
            for _ in 0..rng.random_range(1..=8) {
                points.push((gaussian_vec(&mut rng, d, 2.0), c));
            }
        }
        let post = fit_posteriors(points.iter().map(|(z, y)| (z.as_slice(), *y)), d, 1e9)?;
        let finite = fit_posteriors(points.iter().map(|(z, y)| (z.as_slice(), *y)), d, 7.5)?;
        for c in 0..k {
            let members: Vec<&Vec<f64>> = points.iter().filter(|p| p.1 == c).map(|p| &p.0).collect();
            let n = members.len() as f64;
            let p = post.get(c);
            for j in 0..d {
                let sum: f64 = members.iter().map(|z| z[j]).sum();
                let mean = sum / n;
                worst_mean = worst_mean.max((p.mean[j] - mean).abs() / mean.abs().max(1.0));
                let shrunk = sum / (n + 1.0 / 7.5);
                worst_finite = worst_finite.max(rel_err(finite.get(c).mean[j], shrunk));
            }
            worst_var = worst_var.max(rel_err(p.var_scale(), 1.0 / n));
        }
    }
    let unseen = fit_posteriors(std::iter::empty::<(&[f64], usize)>(), 3, 2.0)?.get(4);
    let prior_gap = unseen.mean.iter().map(|m| m.abs()).fold(0.0, f64::max) + (unseen.var_scale() - 2.0).abs();
    Ok(vec![
        Check::at_most(s, "flat-limit mean vs sample mean (rel)", worst_mean, 1e-6),
        Check::at_most(s, "flat-limit variance vs 1/n (rel)", worst_var, 1e-6),
        Check::at_most(s, "finite-prior mean vs S/(n+1/a) (rel)", worst_finite, 1e-12),
        Check::at_most(s, "unseen class returns the prior", prior_gap, 0.0),
    ])
}

/// Signature of a candidate log predictive, so that a deliberately broken
/// implementation can be pushed through the same checks.
pub type LogPredictiveFn = fn(&PosteriorSet, &[f64], &[usize]) -> Result<BTreeMap<usize, f64>>;

pub fn predictive_checks(seed: u64, candidate: LogPredictiveFn) -> Result<Vec<Check>> {
    let s = Suite::Predictive;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let worked = worked_posterior();
    let p0 = candidate(&worked, &[1.0], &[0, 1])?[&0].exp();
    checks.push(Check::at_most(s, "worked case p(class 0) vs 0.5212", (p0 - 0.5212).abs(), 0.002));
    let mc = predictive_oracle_mc(&worked, &[1.0], &[0, 1], 100_000, seed)?;
    checks.push(Check::at_most(
        s,
        "worked case vs Monte Carlo (std errs)",
        (p0 - mc.prob[&0]).abs() / mc.std_err[&0],
        3.0,
    ));

    let mut worst_z = 0.0f64;
    let mut worst_norm = 0.0f64;
    let mut worst_equiv = 0.0f64;
    for i in 0..20 {
        let prior_a = if i % 2 == 0 { f64::INFINITY } else { 3.0 };
        let (post, z, allowed) = random_posterior_instance(&mut rng, prior_a);
        let lp = candidate(&post, &z, &allowed)?;
        let mc = predictive_oracle_mc(&post, &z, &allowed, 100_000, seed.wrapping_add(1000 + i))?;
        for c in &allowed {
            let diff = (lp[c].exp() - mc.prob[c]).abs();
            let z_score = if diff == 0.0 { 0.0 } else { diff / mc.std_err[c] };
            worst_z = worst_z.max(z_score);
        }
        worst_norm = worst_norm.max((lp.values().map(|v| v.exp()).sum::<f64>() - 1.0).abs());

        if prior_a.is_finite() {
            continue;
        }
        let shift = gaussian_vec(&mut rng, post.dim(), 3.0);
        let moved: Vec<ClassPosterior> = post
            .observed_classes()
            .map(|p| ClassPosterior {
                mean: p.mean.iter().zip(&shift).map(|(m, t)| m + t).collect(),
                ..p.clone()
            })
            .collect();
        let moved = PosteriorSet::from_posteriors(post.dim(), post.prior_a(), moved)?;
        let zt: Vec<f64> = z.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let lt = candidate(&moved, &zt, &allowed)?;
        for c in &allowed {
            worst_equiv = worst_equiv.max((lt[c] - lp[c]).abs());
        }
    }
    checks.push(Check::at_most(s, "random instances vs Monte Carlo (std errs)", worst_z, 3.0));
    checks.push(Check::at_most(s, "probabilities sum to one", worst_norm, 1e-12));
    checks.push(Check::at_most(s, "translation leaves log p unchanged", worst_equiv, 1e-10));
    Ok(checks)
}

pub fn gradient_checks(seed: u64) -> Result<Vec<Check>> {
    let s = Suite::Gradient;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut worst_head = 0.0f64;
    for i in 0..20 {
        let prior_a = if i % 2 == 0 { f64::INFINITY } else { 5.0 };
        let (post, z, allowed) = random_posterior_instance(&mut rng, prior_a);
        let y = allowed[rng.random_range(0..allowed.len())];
        let report = loss_and_grad(&post, &[Target { z: &z, y, allowed: &allowed }])?;
        let h = 1e-6;
        for j in 0..z.len() {
            let at = |delta: f64| -> Result<f64> {
                let mut zz = z.clone();
                zz[j] += delta;
                Ok(-log_predictive(&post, &zz, &allowed)?[&y])
            };
            let numeric = (at(h)? - at(-h)?) / (2.0 * h);
            let analytic = report.per_example_dl_dz[0][j];
            worst_head = worst_head.max((analytic - numeric).abs() / analytic.abs().max(1.0));
        }
    }

    let mut worst_net = 0.0f64;
    let mut worst_linear = 0.0f64;
    let mut deterministic = true;
    for i in 0..20 {
        let d_in = rng.random_range(1..=4);
        let hidden = rng.random_range(2..=6);
        let d_z = rng.random_range(1..=3);
        let dims = [d_in, hidden, d_z];
        let params = init_mlp(&dims, seed.wrapping_add(i))?;
        let batch = rng.random_range(1..=4);
        let xs: Vec<Vec<f64>> = (0..batch).map(|_| gaussian_vec(&mut rng, d_in, 1.0)).collect();
        let w: Vec<Vec<f64>> = (0..batch).map(|_| gaussian_vec(&mut rng, d_z, 1.0)).collect();
        let loss = |zs: &[Vec<f64>]| -> f64 {
            zs.iter()
                .zip(&w)
                .map(|(z, wi)| z.iter().zip(wi).map(|(a, b)| a * b + 0.5 * a * a).sum::<f64>())
                .sum()
        };
        let (zs, cache) = forward(&params, &xs)?;
        let dl_dz: Vec<Vec<f64>> = zs
            .iter()
            .zip(&w)
            .map(|(z, wi)| z.iter().zip(wi).map(|(a, b)| b + a).collect())
            .collect();
        let analytic = backward(&params, &cache, &dl_dz)?.flat();
        let numeric = finite_diff_grad(&params, &xs, loss, 1e-5)?.flat();
        for (a, n) in analytic.iter().zip(&numeric) {
            worst_net = worst_net.max((a - n).abs() / a.abs().max(1.0));
        }

        let g2: Vec<Vec<f64>> = (0..batch).map(|_| gaussian_vec(&mut rng, d_z, 1.0)).collect();
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let combo: Vec<Vec<f64>> = dl_dz
            .iter()
            .zip(&g2)
            .map(|(u, v)| u.iter().zip(v).map(|(x, y)| a * x + b * y).collect())
            .collect();
        let lhs = backward(&params, &cache, &combo)?.flat();
        let r2 = backward(&params, &cache, &g2)?.flat();
        for ((l, r1), r2) in lhs.iter().zip(&analytic).zip(&r2) {
            worst_linear = worst_linear.max((l - (a * r1 + b * r2)).abs());
        }

        let grad = backward(&params, &cache, &dl_dz)?;
        let again = backward(&params, &forward(&params, &xs)?.1, &dl_dz)?;
        deterministic &= grad.flat() == again.flat()
            && sgd_step(&params, &grad, 0.1)?.flat() == sgd_step(&params, &again, 0.1)?.flat();
    }
    Ok(vec![
        Check::at_most(s, "head dlogp/dz vs finite differences (rel)", worst_head, 1e-6),
        Check::at_most(s, "network backward vs finite differences (rel)", worst_net, 1e-4),
        Check::at_most(s, "backward is linear in dL/dz", worst_linear, 1e-10),
        Check::at_most(s, "forward/backward/sgd bit-identical reruns", if deterministic { 0.0 } else { 1.0 }, 0.0),
    ])
}

pub fn selection_checks(seed: u64) -> Result<Vec<Check>> {
    let s = Suite::Selection;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = SelectionConfig::default();
    let instances = 60;
    let mut near_optimal = 0usize;
    let mut kl_mismatch = 0.0f64;
    let mut contract_breaches = 0usize;
    for _ in 0..instances {
        let n = rng.random_range(3..=12);
        let m = rng.random_range(1..=4.min(n - 1));
        let d = rng.random_range(1..=4);
        let zs: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(&mut rng, d, 1.0)).collect();

        let picked = lasso_select_indices(&zs, m, &cfg);
        if picked.len() > m || picked.iter().any(|&i| i >= n) || picked.iter().duplicates().next().is_some() {
            contract_breaches += 1;
            continue;
        }
        let best = mean_gap(&zs, &brute_force_select(&zs, m)?);
        let got = mean_gap(&zs, &picked);
        if got - best <= (0.05 * best).max(1e-6) {
            near_optimal += 1;
        }

        // Among m-subsets, KL between the induced posteriors and the gap
        // between means must rank subsets identically.
        let full_mean = crate::linalg::mean_of(&zs);
        let full = IsotropicGaussian {
            mean: &full_mean,
            var_scale: 1.0 / n as f64,
        };
        let mut by_kl: Option<(f64, f64)> = None;
        let mut min_gap = f64::INFINITY;
        for subset in (0..n).combinations(m) {
            let sub_mean = crate::linalg::mean_of_subset(&zs, &subset);
            let kl = kl_isotropic(
                IsotropicGaussian {
                    mean: &sub_mean,
                    var_scale: 1.0 / m as f64,
                },
                full,
            )?;
            let gap = mean_gap(&zs, &subset);
            if by_kl.is_none_or(|(k, _)| kl < k) {
                by_kl = Some((kl, gap));
            }
            min_gap = min_gap.min(gap);
        }
        let kl_gap = by_kl.map(|b| b.1).unwrap_or(0.0);
        kl_mismatch = kl_mismatch.max((kl_gap - min_gap).abs() / min_gap.max(1e-12));
    }
    Ok(vec![
        Check::at_least(
            s,
            "lasso within 5% of the optimum (fraction)",
            near_optimal as f64 / instances as f64,
            0.9,
        ),
        Check::at_most(s, "KL argmin equals mean-gap argmin (rel)", kl_mismatch, 1e-9),
        Check::at_most(s, "selections outside candidates or over m", contract_breaches as f64, 0.0),
    ])
}

pub fn shift_checks(seed: u64) -> Result<Vec<Check>> {
    let s = Suite::Shift;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let trials = 100_000;
    let mut checks = Vec::new();
    let worked: Vec<Vec<f64>> = [0.0, 2.0, 4.0, 6.0].iter().map(|&x| vec![x]).collect();
    for (label, noise) in [
        ("gaussian", ShiftNoise::Gaussian { mean: 0.0, var: 1.0 }),
        ("uniform", ShiftNoise::Uniform { mean: 0.0, var: 1.0 }),
    ] {
        let r = shift_expectation_check(&worked, &[1, 2], noise, trials, &mut rng)?;
        checks.push(Check::at_most(
            s,
            format!("worked case predicts 0.25, {label}"),
            (r.predicted - 0.25).abs(),
            1e-12,
        ));
        checks.push(Check::at_most(
            s,
            format!("worked case, {label} (std errs)"),
            r.z_score(),
            3.0,
        ));
    }
    let mut worst = 0.0f64;
    for i in 0..6 {
        let n = rng.random_range(3..=10);
        let d = rng.random_range(1..=3);
        let m = rng.random_range(1..n);
        let zs: Vec<Vec<f64>> = (0..n).map(|_| gaussian_vec(&mut rng, d, 1.0)).collect();
        let subset: Vec<usize> = rand::seq::index::sample(&mut rng, n, m).into_vec();
        let mean = rng.random_range(-1.0..1.0);
        let var = rng.random_range(0.1..2.0);
        let noise = if i % 2 == 0 {
            ShiftNoise::Gaussian { mean, var }
        } else {
            ShiftNoise::Uniform { mean, var }
        };
        let r = shift_expectation_check(&zs, &subset, noise, trials, &mut rng)?;
        worst = worst.max(r.z_score());
    }
    checks.push(Check::at_most(s, "random subsets and noise (std errs)", worst, 3.0));
    Ok(checks)
}

pub fn reservoir_checks(seed: u64) -> Result<Vec<Check>> {
    let s = Suite::Reservoir;
    let (n, m, runs) = (100usize, 10usize, 10_000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = vec![0usize; n];
    let mut capacity_ok = true;
    for _ in 0..runs {
        let mut r = Reservoir::new(m);
        for item in 0..n {
            r.offer(item, &mut rng);
            capacity_ok &= r.items().len() == (item + 1).min(m);
        }
        for &item in r.items() {
            hits[item] += 1;
        }
    }
    let p = m as f64 / n as f64;
    let se = (p * (1.0 - p) / runs as f64).sqrt();
    let worst = hits
        .iter()
        .map(|&h| (h as f64 / runs as f64 - p).abs() / se)
        .fold(0.0, f64::max);
    Ok(vec![
        Check::at_most(s, "per-item inclusion vs m/N (binomial std errs)", worst, 3.0),
        Check::at_most(s, "buffer never exceeds capacity", if capacity_ok { 0.0 } else { 1.0 }, 0.0),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::NAMED.into_iter().chain([Suite::All]) {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!(matches!("posterio".parse::<Suite>(), Err(Error::Config(_))));
    }

    #[test]
    fn fast_suites_pass() {
        for s in [Suite::Posterior, Suite::Gradient, Suite::Selection] {
            let report = run_selftest(s).unwrap();
            assert!(report.passed(), "{report}");
        }
    }

    /// Predictive that forgets the uncertainty of the class mean.
    fn plug_in_mean(post: &PosteriorSet, z: &[f64], allowed: &[usize]) -> Result<BTreeMap<usize, f64>> {
        let scores: Vec<(usize, f64)> = allowed
            .iter()
            .map(|&c| {
                let p = post.get(c);
                (c, -0.5 * crate::linalg::sq_dist(z, &p.mean))
            })
            .collect();
        let lse = crate::linalg::log_sum_exp(&scores.iter().map(|s| s.1).collect::<Vec<_>>());
        Ok(scores.into_iter().map(|(c, s)| (c, s - lse)).collect())
    }

    /// Predictive whose variance term is doubled.
    fn doubled_variance(post: &PosteriorSet, z: &[f64], allowed: &[usize]) -> Result<BTreeMap<usize, f64>> {
        let scores: Vec<(usize, f64)> = allowed
            .iter()
            .map(|&c| {
                let p = post.get(c);
                let scale = 1.0 + 2.0 * p.var_scale();
                let d = z.len() as f64;
                (c, -0.5 * crate::linalg::sq_dist(z, &p.mean) / scale - 0.5 * d * scale.ln())
            })
            .collect();
        let lse = crate::linalg::log_sum_exp(&scores.iter().map(|s| s.1).collect::<Vec<_>>());
        Ok(scores.into_iter().map(|(c, s)| (c, s - lse)).collect())
    }

    #[test]
    fn predictive_suite_catches_variance_mutations() {
        for broken in [plug_in_mean as LogPredictiveFn, doubled_variance] {
            let checks = predictive_checks(12, broken).unwrap();
            let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name.clone()).collect();
            assert!(failed.iter().any(|n| n.contains("Monte Carlo")), "{checks:?}");
        }
    }

    #[test]
    fn display_marks_failures() {
        let c = Check::at_most(Suite::Shift, "x", 4.0, 3.0);
        assert!(c.to_string().starts_with("FAIL"));
        let c = Check::at_least(Suite::Selection, "y", 0.95, 0.9);
        assert!(c.to_string().starts_with("ok") && c.to_string().contains(">="));
    }
}
