//! Class-balanced replay memory and the rules that decide what it keeps.
//!
//! DeepCCG keeps, per class, the subset of current memory plus incoming batch
//! whose embedding mean is closest to the mean of all of them. For fixed
//! subset sizes this is the same subset that minimises the KL divergence
//! between the posteriors over the class mean induced by the two sets.

use std::collections::BTreeMap;

use itertools::Itertools;
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{mean_of, mean_of_subset, sq_dist};
use crate::stream::Example;

/// Per-class memory of raw examples, at most `capacity_per_class` each.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBuffer {
    capacity_per_class: usize,
    classes: BTreeMap<usize, Vec<Example>>,
}

impl MemoryBuffer {
    pub fn new(capacity_per_class: usize) -> Self {
        MemoryBuffer {
            capacity_per_class,
            classes: BTreeMap::new(),
        }
    }

    pub fn capacity_per_class(&self) -> usize {
        self.capacity_per_class
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class(&self, c: usize) -> &[Example] {
        self.classes.get(&c).map_or(&[], Vec::as_slice)
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.keys().copied()
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        self.classes.iter().map(|(c, v)| (*c, v.len())).collect()
    }

    /// All stored examples, class by class.
    pub fn examples(&self) -> Vec<Example> {
        self.classes.values().flatten().cloned().collect()
    }

    /// Replaces the stored list of class `c`.
    pub fn set_class(&mut self, c: usize, examples: Vec<Example>) -> Result<()> {
        if examples.len() > self.capacity_per_class {
            return Err(Error::Contract(format!(
                "{} examples exceed the per-class capacity {}",
                examples.len(),
                self.capacity_per_class
            )));
        }
        if examples.iter().any(|e| e.y != c) {
            return Err(Error::Contract(format!("foreign label stored under class {c}")));
        }
        if examples.is_empty() {
            self.classes.remove(&c);
        } else {
            self.classes.insert(c, examples);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsotropicGaussian<'a> {
    pub mean: &'a [f64],
    pub var_scale: f64,
}

/// `KL(p || q)` for Gaussians with covariances `var_scale * I`.
pub fn kl_isotropic(p: IsotropicGaussian<'_>, q: IsotropicGaussian<'_>) -> Result<f64> {
    if p.mean.len() != q.mean.len() {
        return Err(Error::Shape("KL between Gaussians of different dimension".into()));
    }
    if !(p.var_scale > 0.0 && q.var_scale > 0.0) {
        return Err(Error::Contract("KL needs positive variances".into()));
    }
    let d = p.mean.len() as f64;
    let ratio = p.var_scale / q.var_scale;
    let kl = 0.5 * (d * ratio + sq_dist(p.mean, q.mean) / q.var_scale - d - d * ratio.ln());
    Ok(kl.max(0.0))
}

/// `||mean(all) - mean(subset)||^2`.
pub fn mean_gap<V: AsRef<[f64]>>(candidates: &[V], subset: &[usize]) -> f64 {
    sq_dist(&mean_of(candidates), &mean_of_subset(candidates, subset))
}

/// Exhaustive minimiser of [`mean_gap`] over all `m`-subsets. Ties go to the
/// lexicographically smallest index set. Cost is `C(n, m)`: oracle use only.
pub fn brute_force_select<V: AsRef<[f64]>>(candidates: &[V], m: usize) -> Result<Vec<usize>> {
    if m > candidates.len() {
        return Err(Error::Contract(format!(
            "cannot pick {m} of {} candidates",
            candidates.len()
        )));
    }
    let target = mean_of(candidates);
    let mut best: Option<(f64, Vec<usize>)> = None;
    for subset in (0..candidates.len()).combinations(m) {
        let gap = sq_dist(&target, &mean_of_subset(candidates, &subset));
        if best.as_ref().is_none_or(|(b, _)| gap < *b) {
            best = Some((gap, subset));
        }
    }
    Ok(best.map(|(_, s)| s).unwrap_or_default())
}

pub const DEFAULT_LAMBDA: f64 = 0.01;
pub const DEFAULT_SELECTION_STEPS: usize = 100;
pub const DEFAULT_SELECTION_STEP_SIZE: f64 = 0.05;

/// Hyperparameters of the lasso relaxation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub lambda: f64,
    pub steps: usize,
    pub step_size: f64,
    /// Rounds of element exchanges applied to the top-m selection.
    pub exchange_rounds: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            lambda: DEFAULT_LAMBDA,
            steps: DEFAULT_SELECTION_STEPS,
            step_size: DEFAULT_SELECTION_STEP_SIZE,
            exchange_rounds: 64,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || self.steps == 0 || !(self.step_size > 0.0) {
            return Err(Error::Config(
                "selection needs lambda >= 0, steps >= 1 and step_size > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Lasso objective `lambda ||beta||_1 + ||target - sum_i beta_i z_i / ||beta||_1||^2`
/// and its gradient, for `beta` in `[0, 1]^n`.
pub fn lasso_objective<V: AsRef<[f64]>>(
    beta: &[f64],
    zs: &[V],
    target: &[f64],
    lambda: f64,
) -> (f64, Vec<f64>) {
    let total = beta.iter().sum::<f64>().max(1e-8);
    let d = target.len();
    let mut weighted = vec![0.0; d];
    for (b, z) in beta.iter().zip(zs) {
        weighted.iter_mut().zip(z.as_ref()).for_each(|(w, v)| *w += b * v);
    }
    let v: Vec<f64> = weighted.iter().map(|w| w / total).collect();
    let r: Vec<f64> = target.iter().zip(&v).map(|(t, vi)| t - vi).collect();
    let value = lambda * beta.iter().sum::<f64>() + r.iter().map(|x| x * x).sum::<f64>();
    // d v / d beta_i = (z_i - v) / total
    let grad = zs
        .iter()
        .map(|z| {
            let proj: f64 = z.as_ref().iter().zip(&v).zip(&r).map(|((zi, vi), ri)| ri * (zi - vi)).sum();
            lambda - 2.0 * proj / total
        })
        .collect();
    (value, grad)
}

/// Projected gradient descent on the lasso objective from `beta = 1`.
pub fn lasso_weights<V: AsRef<[f64]>>(zs: &[V], cfg: &SelectionConfig) -> Vec<f64> {
    let target = mean_of(zs);
    let mut beta = vec![1.0; zs.len()];
    for _ in 0..cfg.steps {
        let (_, grad) = lasso_objective(&beta, zs, &target, cfg.lambda);
        beta.iter_mut()
            .zip(&grad)
            .for_each(|(b, g)| *b = (*b - cfg.step_size * g).clamp(0.0, 1.0));
    }
    beta
}

/// Indices of the `m` largest weights, ties by position.
fn top_m(beta: &[f64], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..beta.len()).collect();
    order.sort_by(|&a, &b| beta[b].total_cmp(&beta[a]).then(a.cmp(&b)));
    order.truncate(m);
    order.sort_unstable();
    order
}

/// Largest number of candidate moves examined per round at any exchange size
/// above two.
const EXCHANGE_BUDGET: usize = 20_000;

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Best-improvement local search over exchanges of up to three elements
/// between the selection and the remaining candidates. Single and pair
/// exchanges are always searched; triples only while their count stays within
/// [`EXCHANGE_BUDGET`].
fn refine_by_exchange<V: AsRef<[f64]>>(zs: &[V], mut chosen: Vec<usize>, rounds: usize) -> Vec<usize> {
    let n = zs.len();
    let m = chosen.len();
    if m == 0 || m == n {
        return chosen;
    }
    let max_k = if binomial(m, 3).saturating_mul(binomial(n - m, 3)) <= EXCHANGE_BUDGET {
        3
    } else {
        2
    };
    let d = zs[0].as_ref().len();
    let target = mean_of(zs);
    let mut sum = vec![0.0; d];
    for &i in &chosen {
        sum.iter_mut().zip(zs[i].as_ref()).for_each(|(s, v)| *s += v);
    }
    let gap_of = |s: &[f64]| -> f64 {
        s.iter().zip(&target).map(|(si, t)| (si / m as f64 - t).powi(2)).sum()
    };
    let mut current = gap_of(&sum);
    let mut trial = vec![0.0; d];
    for _ in 0..rounds {
        let outside: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
        let mut best: Option<(f64, Vec<usize>, Vec<usize>)> = None;
        for k in 1..=max_k.min(m).min(outside.len()) {
            for ins in (0..m).combinations(k) {
                for outs in outside.iter().copied().combinations(k) {
                    trial.copy_from_slice(&sum);
                    for (&pos, &j) in ins.iter().zip(&outs) {
                        let i = chosen[pos];
                        for ((t, zj), zi) in trial.iter_mut().zip(zs[j].as_ref()).zip(zs[i].as_ref()) {
                            *t += zj - zi;
                        }
                    }
                    let g = gap_of(&trial);
                    if g < current - 1e-15 && best.as_ref().is_none_or(|(b, _, _)| g < *b) {
                        best = Some((g, ins.clone(), outs));
                    }
                }
            }
        }
        let Some((g, ins, outs)) = best else { break };
        for (pos, j) in ins.into_iter().zip(outs) {
            let i = chosen[pos];
            sum.iter_mut()
                .zip(zs[j].as_ref().iter().zip(zs[i].as_ref()))
                .for_each(|(s, (vj, vi))| *s += vj - vi);
            chosen[pos] = j;
        }
        current = g;
    }
    chosen.sort_unstable();
    chosen
}

/// Chooses which candidates to keep: lasso weights, top `m`, then exchange
/// refinement. Returns sorted candidate indices; all of them if `n <= m`.
pub fn lasso_select_indices<V: AsRef<[f64]>>(zs: &[V], m: usize, cfg: &SelectionConfig) -> Vec<usize> {
    if zs.len() <= m {
        return (0..zs.len()).collect();
    }
    if m == 0 {
        return Vec::new();
    }
    let beta = lasso_weights(zs, cfg);
    refine_by_exchange(zs, top_m(&beta, m), cfg.exchange_rounds)
}

/// New memory for one class from the batch examples of that class plus its
/// current memory. `embedded` holds the embeddings of `batch_class` followed by
/// `memory_class`.
pub fn lasso_select(
    batch_class: &[Example],
    memory_class: &[Example],
    embedded: &[Vec<f64>],
    m: usize,
    cfg: &SelectionConfig,
) -> Result<Vec<Example>> {
    let n = batch_class.len() + memory_class.len();
    if embedded.len() != n {
        return Err(Error::Shape(format!("{} embeddings for {n} candidates", embedded.len())));
    }
    let candidates: Vec<&Example> = batch_class.iter().chain(memory_class).collect();
    Ok(lasso_select_indices(embedded, m, cfg)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}

/// Flat reservoir over a stream, for the reservoir-sampling variants.
#[derive(Debug, Clone, PartialEq)]
pub struct Reservoir<T> {
    capacity: usize,
    seen: usize,
    items: Vec<T>,
}

impl<T> Reservoir<T> {
    pub fn new(capacity: usize) -> Self {
        Reservoir {
            capacity,
            seen: 0,
            items: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seen(&self) -> usize {
        self.seen
    }

    pub fn items(&self) -> &[T] {
        &self.items
    }

    pub fn offer<R: Rng + ?Sized>(&mut self, item: T, rng: &mut R) {
        self.seen += 1;
        reservoir_update(&mut self.items, item, self.seen, self.capacity, rng);
    }
}

/// Classic reservoir step. `seen_count` counts the stream so far including
/// `item`.
pub fn reservoir_update<T, R: Rng + ?Sized>(
    buffer: &mut Vec<T>,
    item: T,
    seen_count: usize,
    capacity: usize,
    rng: &mut R,
) {
    debug_assert!(seen_count > buffer.len());
    if capacity == 0 {
        return;
    }
    if buffer.len() < capacity {
        buffer.push(item);
    } else {
        let u = rng.random_range(0..seen_count);
        if u < capacity {
            buffer[u] = item;
        }
    }
}

/// Uniform replay draw without replacement of `min(r, floor(|M|/2))`
/// examples; returns `(replay, rest)`, both in memory order.
pub fn sample_replay<R: Rng + ?Sized>(memory: &[Example], r: usize, rng: &mut R) -> (Vec<Example>, Vec<Example>) {
    split_sample(memory, r.min(memory.len() / 2), rng)
}

/// Uniform draw of exactly `min(r, |M|)` examples.
pub fn sample_uniform<R: Rng + ?Sized>(memory: &[Example], r: usize, rng: &mut R) -> (Vec<Example>, Vec<Example>) {
    split_sample(memory, r.min(memory.len()), rng)
}

fn split_sample<R: Rng + ?Sized>(memory: &[Example], k: usize, rng: &mut R) -> (Vec<Example>, Vec<Example>) {
    if k == 0 {
        return (Vec::new(), memory.to_vec());
    }
    let mut picked = vec![false; memory.len()];
    for i in index::sample(rng, memory.len(), k) {
        picked[i] = true;
    }
    let (mut replay, mut rest) = (Vec::with_capacity(k), Vec::with_capacity(memory.len() - k));
    for (e, p) in memory.iter().zip(picked) {
        if p {
            replay.push(e.clone());
        } else {
            rest.push(e.clone());
        }
    }
    (replay, rest)
}

/// Distribution of the additive representation shift.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ShiftNoise {
    Gaussian { mean: f64, var: f64 },
    /// Uniform on `[mean - sqrt(3 var), mean + sqrt(3 var)]`.
    Uniform { mean: f64, var: f64 },
}

impl ShiftNoise {
    pub fn var(&self) -> f64 {
        match *self {
            ShiftNoise::Gaussian { var, .. } | ShiftNoise::Uniform { var, .. } => var,
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            ShiftNoise::Gaussian { mean, var } => {
                if var == 0.0 {
                    mean
                } else {
                    Normal::new(mean, var.sqrt()).expect("finite variance").sample(rng)
                }
            }
            ShiftNoise::Uniform { mean, var } => {
                let half = (3.0 * var).sqrt();
                if half == 0.0 {
                    mean
                } else {
                    rng.random_range(mean - half..mean + half)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftCheck {
    pub empirical_mean: f64,
    pub std_err: f64,
    pub predicted: f64,
}

impl ShiftCheck {
    /// `|empirical - predicted|` in standard errors; exact agreement counts as 0.
    pub fn z_score(&self) -> f64 {
        let diff = (self.empirical_mean - self.predicted).abs();
        if diff == 0.0 {
            0.0
        } else {
            diff / self.std_err
        }
    }
}

/// Monte Carlo check of `E||mean(shifted all) - mean(shifted subset)||^2 =
/// ||gap||^2 + nu (1/|subset| - 1/|all|)` with `nu = d * var` under i.i.d.
/// per-point, per-coordinate shifts.
pub fn shift_expectation_check<V: AsRef<[f64]>, R: Rng + ?Sized>(
    candidates: &[V],
    subset: &[usize],
    noise: ShiftNoise,
    trials: usize,
    rng: &mut R,
) -> Result<ShiftCheck> {
    let n = candidates.len();
    if subset.is_empty() || subset.len() > n {
        return Err(Error::Contract("subset must be a non-empty part of the candidates".into()));
    }
    let mut seen = vec![false; n];
    for &i in subset {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::Contract(format!("subset index {i} is out of range or repeated")));
        }
    }
    if trials < 2 {
        return Err(Error::Contract("need at least two trials".into()));
    }
    let d = candidates[0].as_ref().len();
    let predicted =
        mean_gap(candidates, subset) + d as f64 * noise.var() * (1.0 / subset.len() as f64 - 1.0 / n as f64);

    let mut shifted: Vec<Vec<f64>> = candidates.iter().map(|c| c.as_ref().to_vec()).collect();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        for (s, c) in shifted.iter_mut().zip(candidates) {
            for (v, base) in s.iter_mut().zip(c.as_ref()) {
                *v = base + noise.sample(rng);
            }
        }
        let g = mean_gap(&shifted, subset);
        sum += g;
        sum_sq += g * g;
    }
    let t = trials as f64;
    let mean = sum / t;
    let var = ((sum_sq - t * mean * mean) / (t - 1.0)).max(0.0);
    Ok(ShiftCheck {
        empirical_mean: mean,
        std_err: (var / t).sqrt(),
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalars(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|x| vec![*x]).collect()
    }

    fn ex(id: usize, y: usize) -> Example {
        Example {
            id,
            x: vec![id as f64],
            y,
            t: 0,
        }
    }

    #[test]
    fn kl_basics() {
        let a = IsotropicGaussian {
            mean: &[0.5, -1.0],
            var_scale: 0.7,
        };
        assert_eq!(kl_isotropic(a, a).unwrap(), 0.0);
        let p = IsotropicGaussian { mean: &[0.0], var_scale: 1.0 };
        let q = IsotropicGaussian { mean: &[1.0], var_scale: 1.0 };
        assert!((kl_isotropic(p, q).unwrap() - 0.5).abs() < 1e-15);
        let bad = IsotropicGaussian { mean: &[1.0], var_scale: 0.0 };
        assert!(kl_isotropic(p, bad).is_err());
    }

    #[test]
    fn kl_matches_quadrature() {
        let (mp, vp, mq, vq) = (0.3, 0.4, -0.8, 1.7);
        let pdf = |x: f64, m: f64, v: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
        let h = 1e-3;
        let quad: f64 = (-20_000..=20_000)
            .map(|i| {
                let x = i as f64 * h;
                let p = pdf(x, mp, vp);
                if p > 0.0 {
                    p * (p / pdf(x, mq, vq)).ln() * h
                } else {
                    0.0
                }
            })
            .sum();
        let kl = kl_isotropic(
            IsotropicGaussian { mean: &[mp], var_scale: vp },
            IsotropicGaussian { mean: &[mq], var_scale: vq },
        )
        .unwrap();
        assert!((kl - quad).abs() < 1e-4, "{kl} vs {quad}");
    }

    #[test]
    fn brute_force_worked_cases() {
        assert_eq!(brute_force_select(&scalars(&[0.0, 10.0, 5.0]), 1).unwrap(), vec![2]);
        assert_eq!(brute_force_select(&scalars(&[0.0, 2.0, 4.0, 6.0]), 2).unwrap(), vec![0, 3]);
        let all = scalars(&[1.0, 7.0, 2.0]);
        let full = brute_force_select(&all, 3).unwrap();
        assert_eq!(full, vec![0, 1, 2]);
        assert_eq!(mean_gap(&all, &full), 0.0);
        assert!(brute_force_select(&all, 4).is_err());
    }

    #[test]
    fn lasso_select_small_cases() {
        let zs = scalars(&[0.0, 10.0, 5.0]);
        assert_eq!(lasso_select_indices(&zs, 1, &SelectionConfig::default()), vec![2]);
        assert_eq!(lasso_select_indices(&zs, 3, &SelectionConfig::default()), vec![0, 1, 2]);
        assert_eq!(lasso_select_indices(&zs, 0, &SelectionConfig::default()), Vec::<usize>::new());
    }

    #[test]
    fn lasso_gradient_matches_finite_differences() {
        let zs = vec![vec![0.3, 1.0], vec![-2.0, 0.5], vec![1.5, -0.7], vec![0.0, 0.2]];
        let target = mean_of(&zs);
        let beta = vec![0.9, 0.4, 0.7, 0.2];
        let (_, g) = lasso_objective(&beta, &zs, &target, 0.05);
        let h = 1e-6;
        for i in 0..beta.len() {
            let mut up = beta.clone();
            up[i] += h;
            let mut dn = beta.clone();
            dn[i] -= h;
            let fd = (lasso_objective(&up, &zs, &target, 0.05).0 - lasso_objective(&dn, &zs, &target, 0.05).0) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "{fd} vs {}", g[i]);
        }
    }

    #[test]
    fn lasso_select_keeps_only_candidates() {
        let batch: Vec<Example> = (0..4).map(|i| ex(i, 2)).collect();
        let mem: Vec<Example> = (10..15).map(|i| ex(i, 2)).collect();
        let zs: Vec<Vec<f64>> = batch.iter().chain(&mem).map(|e| e.x.clone()).collect();
        let kept = lasso_select(&batch, &mem, &zs, 3, &SelectionConfig::default()).unwrap();
        assert_eq!(kept.len(), 3);
        assert!(kept.iter().all(|k| batch.contains(k) || mem.contains(k)));
        assert!(lasso_select(&batch, &mem, &zs[1..], 3, &SelectionConfig::default()).is_err());
    }

    #[test]
    fn reservoir_fill_and_zero_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = Reservoir::new(3);
        for i in 0..3 {
            r.offer(i, &mut rng);
        }
        assert_eq!(r.items(), &[0, 1, 2]);
        let mut empty = Reservoir::new(0);
        for i in 0..10 {
            empty.offer(i, &mut rng);
        }
        assert!(empty.items().is_empty());
        assert_eq!(empty.seen(), 10);
    }

    #[test]
    fn replay_split_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (r, rest) = sample_replay(&[], 10, &mut rng);
        assert!(r.is_empty() && rest.is_empty());

        let mem: Vec<Example> = (0..20).map(|i| ex(i, i % 3)).collect();
        let (r, rest) = sample_replay(&mem, 10, &mut rng);
        assert_eq!((r.len(), rest.len()), (10, 10));
        let mut ids: Vec<usize> = r.iter().chain(&rest).map(|e| e.id).collect();
        ids.sort_unstable();
        assert_eq!(ids, (0..20).collect::<Vec<_>>());

        let (r, rest) = sample_replay(&mem[..6], 10, &mut rng);
        assert_eq!((r.len(), rest.len()), (3, 3));
    }

    #[test]
    fn shift_check_noise_free_and_full_subset() {
        let zs = scalars(&[0.0, 2.0, 4.0, 7.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = shift_expectation_check(&zs, &[0, 3], ShiftNoise::Gaussian { mean: 0.0, var: 0.0 }, 10, &mut rng).unwrap();
        assert_eq!(c.empirical_mean, c.predicted);
        assert_eq!(c.predicted, mean_gap(&zs, &[0, 3]));

        let full = shift_expectation_check(&zs, &[0, 1, 2, 3], ShiftNoise::Uniform { mean: 0.3, var: 1.0 }, 100, &mut rng).unwrap();
        assert!(full.predicted.abs() < 1e-12);
        assert!(full.empirical_mean.abs() < 1e-12);

        assert!(shift_expectation_check(&zs, &[], ShiftNoise::Gaussian { mean: 0.0, var: 1.0 }, 10, &mut rng).is_err());
        assert!(shift_expectation_check(&zs, &[9], ShiftNoise::Gaussian { mean: 0.0, var: 1.0 }, 10, &mut rng).is_err());
    }

    #[test]
    fn memory_buffer_enforces_capacity_and_labels() {
        let mut m = MemoryBuffer::new(2);
        m.set_class(1, vec![ex(0, 1), ex(1, 1)]).unwrap();
        assert!(m.set_class(1, vec![ex(0, 1), ex(1, 1), ex(2, 1)]).is_err());
        assert!(m.set_class(2, vec![ex(0, 1)]).is_err());
        assert_eq!(m.len(), 2);
        m.set_class(1, vec![]).unwrap();
        assert!(m.is_empty());
    }
}
