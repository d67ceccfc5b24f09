//! Bayesian class-conditional Gaussian classifier.
//!
//! Embeddings of class `c` are modelled as `z ~ N(mu_c, I)` with a prior
//! `mu_c ~ N(0, a I)`. Given `n_c` conditioning embeddings with sum `S_c`
//! the posterior over `mu_c` is `N(S_c / (n_c + 1/a), I / (n_c + 1/a))`, and
//! integrating `mu_c` out gives the class marginal
//! `N(z; mean_c, (1 + 1/(n_c + 1/a)) I)`. Normalising the marginals over the
//! classes a task allows yields the posterior predictive used both for
//! prediction and as the training loss.
//!
//! Everything is computed in log space; unnormalised densities are never
//! exponentiated.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, sq_dist};

pub const DEFAULT_PRIOR_A: f64 = 1e6;
pub const MIN_ORACLE_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPosterior {
    pub class_id: usize,
    pub mean: Vec<f64>,
    pub count: usize,
    pub prior_a: f64,
}

impl ClassPosterior {
    pub fn precision(&self) -> f64 {
        self.count as f64 + 1.0 / self.prior_a
    }

    /// Posterior variance scale of the class mean.
    pub fn var_scale(&self) -> f64 {
        1.0 / self.precision()
    }

    /// Variance scale of the class marginal `p(z | c, D)`.
    pub fn predictive_scale(&self) -> f64 {
        1.0 + self.var_scale()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSet {
    dim: usize,
    prior_a: f64,
    classes: BTreeMap<usize, ClassPosterior>,
    zero: Vec<f64>,
}

impl PosteriorSet {
    /// Builds a set directly from per-class posteriors.
    pub fn from_posteriors(dim: usize, prior_a: f64, posteriors: Vec<ClassPosterior>) -> Result<Self> {
        check_prior(prior_a)?;
        let mut classes = BTreeMap::new();
        for p in posteriors {
            if p.mean.len() != dim {
                return Err(Error::Shape(format!(
                    "posterior mean of length {} in a set of dimension {dim}",
                    p.mean.len()
                )));
            }
            if classes.insert(p.class_id, p).is_some() {
                return Err(Error::Contract("duplicate class in posterior set".into()));
            }
        }
        Ok(PosteriorSet {
            dim,
            prior_a,
            classes,
            zero: vec![0.0; dim],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn prior_a(&self) -> f64 {
        self.prior_a
    }

    /// Posterior of `class`, or the prior if it has no conditioning data.
    pub fn get(&self, class: usize) -> ClassPosterior {
        self.classes.get(&class).cloned().unwrap_or_else(|| ClassPosterior {
            class_id: class,
            mean: self.zero.clone(),
            count: 0,
            prior_a: self.prior_a,
        })
    }

    pub fn observed_classes(&self) -> impl Iterator<Item = &ClassPosterior> {
        self.classes.values()
    }

    /// `(mean, predictive scale)` of a class marginal.
    fn marginal(&self, class: usize) -> Result<(&[f64], f64)> {
        match self.classes.get(&class) {
            Some(p) => Ok((&p.mean, p.predictive_scale())),
            None if self.prior_a.is_finite() => Ok((&self.zero, 1.0 + self.prior_a)),
            None => Err(Error::Contract(format!(
                "class {class} has no conditioning data and the prior is improper"
            ))),
        }
    }
}

fn check_prior(prior_a: f64) -> Result<()> {
    if !(prior_a > 0.0) {
        return Err(Error::Config(format!("prior_a must be positive, got {prior_a}")));
    }
    Ok(())
}

/// Fits every class posterior in one pass over the conditioning embeddings.
///
/// `prior_a = f64::INFINITY` gives the flat-prior limit (sample mean, variance
/// `1/n`); classes without data are then unusable.
pub fn fit_posteriors<'a, I>(conditioning: I, dim: usize, prior_a: f64) -> Result<PosteriorSet>
where
    I: IntoIterator<Item = (&'a [f64], usize)>,
{
    check_prior(prior_a)?;
    let mut sums: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (z, y) in conditioning {
        if z.len() != dim {
            return Err(Error::Shape(format!(
                "embedding of length {} conditioning a head of dimension {dim}",
                z.len()
            )));
        }
        let (sum, n) = sums.entry(y).or_insert_with(|| (vec![0.0; dim], 0));
        sum.iter_mut().zip(z).for_each(|(s, v)| *s += v);
        *n += 1;
    }
    let posteriors = sums
        .into_iter()
        .map(|(class_id, (sum, count))| {
            let precision = count as f64 + 1.0 / prior_a;
            ClassPosterior {
                class_id,
                mean: sum.into_iter().map(|s| s / precision).collect(),
                count,
                prior_a,
            }
        })
        .collect();
    PosteriorSet::from_posteriors(dim, prior_a, posteriors)
}

fn log_normal_iso(z: &[f64], mean: &[f64], scale: f64) -> f64 {
    let d = z.len() as f64;
    -0.5 * d * (2.0 * PI * scale).ln() - sq_dist(z, mean) / (2.0 * scale)
}

fn allowed_set(allowed: &[usize]) -> Result<BTreeSet<usize>> {
    let set: BTreeSet<usize> = allowed.iter().copied().collect();
    if set.is_empty() {
        return Err(Error::Contract("empty set of allowed classes".into()));
    }
    Ok(set)
}

/// Log posterior predictive `log p(c | z, D)` for every allowed class.
pub fn log_predictive(post: &PosteriorSet, z: &[f64], allowed: &[usize]) -> Result<BTreeMap<usize, f64>> {
    let set = allowed_set(allowed)?;
    if z.len() != post.dim {
        return Err(Error::Shape(format!(
            "embedding of length {} queried against dimension {}",
            z.len(),
            post.dim
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite embedding".into()));
    }
    let mut logs = Vec::with_capacity(set.len());
    for &c in &set {
        let (mean, scale) = post.marginal(c)?;
        logs.push(log_normal_iso(z, mean, scale));
    }
    let norm = log_sum_exp(&logs);
    Ok(set.into_iter().zip(logs).map(|(c, l)| (c, l - norm)).collect())
}

/// Most probable allowed class; ties go to the smallest label.
pub fn predict(post: &PosteriorSet, z: &[f64], allowed: &[usize]) -> Result<usize> {
    let logp = log_predictive(post, z, allowed)?;
    let mut best: Option<(usize, f64)> = None;
    for (c, l) in logp {
        if best.is_none_or(|(_, b)| l > b) {
            best = Some((c, l));
        }
    }
    Ok(best.expect("allowed set is non-empty").0)
}

/// One term of the conditional marginal likelihood.
#[derive(Debug, Clone, Copy)]
pub struct Target<'a> {
    pub z: &'a [f64],
    pub y: usize,
    /// Classes of the example's own task.
    pub allowed: &'a [usize],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    /// `-sum_i log p(y_i | z_i, D)`.
    pub total_loss: f64,
    /// `d(-log p(y_i | z_i, D)) / dz_i`, the descent direction is the negative.
    pub per_example_dl_dz: Vec<Vec<f64>>,
    pub per_example_logp: Vec<f64>,
}

/// Negative log predictive of each target and its gradient in `z`, with the
/// posteriors held fixed.
pub fn loss_and_grad(post: &PosteriorSet, targets: &[Target<'_>]) -> Result<LossReport> {
    let mut total_loss = 0.0;
    let mut grads = Vec::with_capacity(targets.len());
    let mut logps = Vec::with_capacity(targets.len());
    for t in targets {
        if !t.allowed.contains(&t.y) {
            return Err(Error::Contract(format!(
                "label {} is not among its task classes {:?}",
                t.y, t.allowed
            )));
        }
        let logp = log_predictive(post, t.z, t.allowed)?;
        // d(-log p_y)/dz = (z - m_y)/s_y - sum_c p_c (z - m_c)/s_c
        let mut g = vec![0.0; post.dim];
        for (&c, &lp) in &logp {
            let (mean, scale) = post.marginal(c)?;
            let w = if c == t.y { 1.0 - lp.exp() } else { -lp.exp() } / scale;
            g.iter_mut()
                .zip(t.z.iter().zip(mean))
                .for_each(|(gi, (zi, mi))| *gi += w * (zi - mi));
        }
        let lp = logp[&t.y];
        total_loss -= lp;
        logps.push(lp);
        grads.push(g);
    }
    if grads.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite loss gradient".into()));
    }
    Ok(LossReport {
        total_loss,
        per_example_dl_dz: grads,
        per_example_logp: logps,
    })
}

/// Monte Carlo estimate of the posterior predictive with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct McPredictive {
    pub prob: BTreeMap<usize, f64>,
    pub std_err: BTreeMap<usize, f64>,
}

/// Independent estimate of the posterior predictive: each class marginal
/// `p(z | c, D) = E_{mu ~ p(mu_c | D)} N(z; mu, I)` is integrated by sampling
/// from the class posterior, then the marginals are normalised over the
/// allowed classes. Standard errors come from the delta method on the ratio.
pub fn predictive_oracle_mc(
    post: &PosteriorSet,
    z: &[f64],
    allowed: &[usize],
    num_samples: usize,
    seed: u64,
) -> Result<McPredictive> {
    let set = allowed_set(allowed)?;
    if num_samples < MIN_ORACLE_SAMPLES {
        return Err(Error::Contract(format!(
            "the oracle needs at least {MIN_ORACLE_SAMPLES} samples, got {num_samples}"
        )));
    }
    if z.len() != post.dim {
        return Err(Error::Shape("embedding dimension mismatch".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = num_samples as f64;
    let mut log_marginals = Vec::with_capacity(set.len());
    let mut rel_vars = Vec::with_capacity(set.len());
    let mut mu = vec![0.0; post.dim];
    for &c in &set {
        let p = post.get(c);
        if !p.prior_a.is_finite() && p.count == 0 {
            return Err(Error::Contract(format!("class {c} has an improper posterior")));
        }
        let sd = p.var_scale().sqrt();
        let logs: Vec<f64> = (0..num_samples)
            .map(|_| {
                for (m, pm) in mu.iter_mut().zip(&p.mean) {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    *m = pm + sd * e;
                }
                log_normal_iso(z, &mu, 1.0)
            })
            .collect();
        let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: Vec<f64> = logs.iter().map(|l| (l - shift).exp()).collect();
        let mean = scaled.iter().sum::<f64>() / n;
        let var = scaled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        log_marginals.push(shift + mean.ln());
        rel_vars.push(var / (n * mean * mean));
    }
    let norm = log_sum_exp(&log_marginals);
    let probs: Vec<f64> = log_marginals.iter().map(|l| (l - norm).exp()).collect();
    let mut prob = BTreeMap::new();
    let mut std_err = BTreeMap::new();
    for (i, &c) in set.iter().enumerate() {
        let var_log: f64 = probs
            .iter()
            .zip(&rel_vars)
            .enumerate()
            .map(|(j, (pj, rv))| {
                let d = if i == j { 1.0 - pj } else { -pj };
                d * d * rv
            })
            .sum();
        prob.insert(c, probs[i]);
        std_err.insert(c, probs[i] * var_log.sqrt());
    }
    Ok(McPredictive { prob, std_err })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_case() -> PosteriorSet {
        PosteriorSet::from_posteriors(
            1,
            f64::INFINITY,
            vec![
                ClassPosterior {
                    class_id: 0,
                    mean: vec![0.0],
                    count: 4,
                    prior_a: f64::INFINITY,
                },
                ClassPosterior {
                    class_id: 1,
                    mean: vec![2.0],
                    count: 1,
                    prior_a: f64::INFINITY,
                },
            ],
        )
        .unwrap()
    }

    fn pts(v: &[(f64, usize)]) -> Vec<(Vec<f64>, usize)> {
        v.iter().map(|(x, y)| (vec![*x], *y)).collect()
    }

    fn fit(v: &[(Vec<f64>, usize)], dim: usize, a: f64) -> PosteriorSet {
        fit_posteriors(v.iter().map(|(z, y)| (z.as_slice(), *y)), dim, a).unwrap()
    }

    #[test]
    fn flat_prior_limit_is_sample_mean() {
        let post = fit(&pts(&[(1.0, 0), (3.0, 0)]), 1, f64::INFINITY);
        let p = post.get(0);
        assert_eq!(p.mean, vec![2.0]);
        assert_eq!(p.var_scale(), 0.5);
    }

    #[test]
    fn empty_class_falls_back_to_prior() {
        let post = fit(&[], 3, 1e6);
        let p = post.get(7);
        assert_eq!(p.count, 0);
        assert_eq!(p.mean, vec![0.0; 3]);
        assert!((p.var_scale() - 1e6).abs() < 1e-6);
    }

    #[test]
    fn finite_prior_is_close_to_flat_limit() {
        let data = pts(&[(0.3, 1), (-1.1, 1), (2.5, 1)]);
        let a = fit(&data, 1, 1e6).get(1);
        let b = fit(&data, 1, f64::INFINITY).get(1);
        assert!(((a.mean[0] - b.mean[0]) / b.mean[0]).abs() < 1e-3);
        assert!(((a.var_scale() - b.var_scale()) / b.var_scale()).abs() < 1e-3);
    }

    #[test]
    fn fit_rejects_mixed_dimensions() {
        let data = [(vec![1.0], 0), (vec![1.0, 2.0], 0)];
        assert!(matches!(
            fit_posteriors(data.iter().map(|(z, y)| (z.as_slice(), *y)), 1, 1e6),
            Err(Error::Shape(_))
        ));
        assert!(fit_posteriors(std::iter::empty(), 1, 0.0).is_err());
    }

    #[test]
    fn symmetric_and_degenerate_predictive() {
        let post = fit(&pts(&[(1.0, 0), (1.0, 1)]), 1, 1e6);
        let lp = log_predictive(&post, &[0.2], &[0, 1]).unwrap();
        assert!((lp[&0] - 0.5f64.ln()).abs() < 1e-12);
        assert!((lp[&1] - 0.5f64.ln()).abs() < 1e-12);

        let single = log_predictive(&post, &[0.2], &[1]).unwrap();
        assert_eq!(single[&1], 0.0);

        assert!(matches!(log_predictive(&post, &[0.2], &[]), Err(Error::Contract(_))));
    }

    #[test]
    fn worked_case_probability() {
        // log N(1; 0, 1.25) - log N(1; 2, 2) = 0.5 ln(1.6) - 0.15
        let diff: f64 = 0.5 * 1.6f64.ln() - 0.15;
        let expected = 1.0 / (1.0 + (-diff).exp());
        let lp = log_predictive(&worked_case(), &[1.0], &[0, 1]).unwrap();
        assert!((lp[&0].exp() - expected).abs() < 1e-12);
        assert!((lp[&0].exp() - 0.5212).abs() < 5e-5);
        assert_eq!(predict(&worked_case(), &[1.0], &[0, 1]).unwrap(), 0);
    }

    #[test]
    fn oracle_agrees_on_worked_case() {
        let mc = predictive_oracle_mc(&worked_case(), &[1.0], &[0, 1], 100_000, 3).unwrap();
        assert!((mc.prob[&0] - 0.5212).abs() < 0.002, "{:?}", mc);
        let single = predictive_oracle_mc(&worked_case(), &[1.0], &[1], 10_000, 3).unwrap();
        assert_eq!(single.prob[&1], 1.0);
        assert!(predictive_oracle_mc(&worked_case(), &[1.0], &[0], 10, 3).is_err());
    }

    #[test]
    fn predict_ties_and_means() {
        let post = fit(&pts(&[(-1.0, 3), (1.0, 5), (4.0, 8)]), 1, 1e6);
        assert_eq!(predict(&post, &[4.0], &[3, 5, 8]).unwrap(), 8);
        assert_eq!(predict(&post, &[0.0], &[3, 5]).unwrap(), 3);
    }

    #[test]
    fn loss_single_class_and_symmetric_cases() {
        let post = fit(&pts(&[(-1.0, 0), (1.0, 1)]), 1, 1e6);
        let r = loss_and_grad(&post, &[Target { z: &[0.4], y: 0, allowed: &[0] }]).unwrap();
        assert_eq!(r.total_loss, 0.0);
        assert_eq!(r.per_example_dl_dz[0], vec![0.0]);

        let r = loss_and_grad(&post, &[Target { z: &[0.0], y: 1, allowed: &[0, 1] }]).unwrap();
        assert!((r.per_example_logp[0] + 2f64.ln()).abs() < 1e-12);
        // descent direction -dL/dz points from the wrong mean (-1) to the true one (+1)
        assert!(-r.per_example_dl_dz[0][0] > 0.0);

        assert!(matches!(
            loss_and_grad(&post, &[Target { z: &[0.0], y: 2, allowed: &[0, 1] }]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn worked_case_loss_and_gradient() {
        let post = worked_case();
        let r = loss_and_grad(&post, &[Target { z: &[1.0], y: 0, allowed: &[0, 1] }]).unwrap();
        assert!((r.total_loss - 0.6516).abs() < 1e-4);
        let h = 1e-6;
        let f = |z: f64| -log_predictive(&post, &[z], &[0, 1]).unwrap()[&0];
        let fd = (f(1.0 + h) - f(1.0 - h)) / (2.0 * h);
        let g = r.per_example_dl_dz[0][0];
        assert!((g - fd).abs() / g.abs().max(1e-12) < 1e-6, "{g} vs {fd}");
    }
}
