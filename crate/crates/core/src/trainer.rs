//! Online learners: DeepCCG, experience replay with a softmax head, and the
//! two hybrids that swap one component of DeepCCG for its ER counterpart.
//!
//! A step is split into a training phase (replay draw, loss, one SGD update of
//! the embedding) and a memory phase (what to keep). The runner probes the
//! representation shift between the two.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ccg_head::{self, fit_posteriors, loss_and_grad, PosteriorSet, Target, DEFAULT_PRIOR_A};
use crate::embedding::{self, backward, embed, forward, init_mlp_with, sgd_step, MlpParams, DEFAULT_LEARNING_RATE};
use crate::error::{Error, Result};
use crate::linalg::{l2_dist, log_sum_exp};
use crate::memory::{lasso_select, sample_replay, sample_uniform, MemoryBuffer, Reservoir, SelectionConfig};
use crate::stream::{Batch, Example, TaskSpec};

pub const DEFAULT_REPLAY_SIZE: usize = 10;
pub const DEFAULT_MEM_TASK_INC: usize = 10;
pub const DEFAULT_MEM_CLASS_INC: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(rename = "deepccg")]
    DeepCcg,
    ErReservoir,
    #[serde(rename = "deepccg_reservoir")]
    DeepCcgReservoir,
    #[serde(rename = "deepccg_standard_head")]
    DeepCcgStandardHead,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::DeepCcg => "deepccg",
            Method::ErReservoir => "er_reservoir",
            Method::DeepCcgReservoir => "deepccg_reservoir",
            Method::DeepCcgStandardHead => "deepccg_standard_head",
        }
    }

    /// Class-conditional Gaussian head and conditional marginal likelihood loss.
    pub fn uses_ccg_head(&self) -> bool {
        matches!(self, Method::DeepCcg | Method::DeepCcgReservoir)
    }

    /// Per-class memory chosen by lasso selection (otherwise a flat reservoir).
    pub fn uses_lasso_memory(&self) -> bool {
        matches!(self, Method::DeepCcg | Method::DeepCcgStandardHead)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    TaskInc,
    ClassInc,
}

impl Scenario {
    pub fn name(&self) -> &'static str {
        match self {
            Scenario::TaskInc => "task_inc",
            Scenario::ClassInc => "class_inc",
        }
    }

    pub fn default_mem_per_class(&self) -> usize {
        match self {
            Scenario::TaskInc => DEFAULT_MEM_TASK_INC,
            Scenario::ClassInc => DEFAULT_MEM_CLASS_INC,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub eta: f64,
    pub replay_size: usize,
    pub prior_a: f64,
    pub mem_per_class: usize,
    pub selection: SelectionConfig,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            eta: DEFAULT_LEARNING_RATE,
            replay_size: DEFAULT_REPLAY_SIZE,
            prior_a: DEFAULT_PRIOR_A,
            mem_per_class: DEFAULT_MEM_TASK_INC,
            selection: SelectionConfig::default(),
        }
    }
}

/// Fully connected output layer followed by a softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub n_classes: usize,
    pub d_z: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LinearHead {
    fn init<R: Rng + ?Sized>(n_classes: usize, d_z: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (d_z as f64).sqrt();
        LinearHead {
            n_classes,
            d_z,
            weights: (0..n_classes * d_z).map(|_| rng.random_range(-bound..=bound)).collect(),
            bias: vec![0.0; n_classes],
        }
    }

    fn logit(&self, z: &[f64], c: usize) -> f64 {
        let row = &self.weights[c * self.d_z..(c + 1) * self.d_z];
        self.bias[c] + row.iter().zip(z).map(|(w, v)| w * v).sum::<f64>()
    }

    fn check_classes(&self, allowed: &[usize]) -> Result<()> {
        if allowed.is_empty() {
            return Err(Error::Contract("empty set of allowed classes".into()));
        }
        if let Some(c) = allowed.iter().find(|&&c| c >= self.n_classes) {
            return Err(Error::Contract(format!("class {c} is outside a head of {} classes", self.n_classes)));
        }
        Ok(())
    }

    /// Log softmax over the allowed classes, in the order given.
    pub fn log_probs(&self, z: &[f64], allowed: &[usize]) -> Result<Vec<f64>> {
        self.check_classes(allowed)?;
        let logits: Vec<f64> = allowed.iter().map(|&c| self.logit(z, c)).collect();
        let norm = log_sum_exp(&logits);
        Ok(logits.into_iter().map(|l| l - norm).collect())
    }

    pub fn predict(&self, z: &[f64], allowed: &[usize]) -> Result<usize> {
        let mut sorted = allowed.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let lp = self.log_probs(z, &sorted)?;
        let mut best = 0;
        for i in 1..sorted.len() {
            if lp[i] > lp[best] {
                best = i;
            }
        }
        Ok(sorted[best])
    }
}

/// Stored examples: class-balanced per-class lists or one flat reservoir.
#[derive(Debug, Clone, PartialEq)]
pub enum Memory {
    PerClass(MemoryBuffer),
    Reservoir(Reservoir<Example>),
}

impl Memory {
    pub fn examples(&self) -> Vec<Example> {
        match self {
            Memory::PerClass(m) => m.examples(),
            Memory::Reservoir(r) => r.items().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Memory::PerClass(m) => m.len(),
            Memory::Reservoir(r) => r.items().len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_counts(&self) -> BTreeMap<usize, usize> {
        match self {
            Memory::PerClass(m) => m.class_counts(),
            Memory::Reservoir(r) => {
                let mut counts = BTreeMap::new();
                for e in r.items() {
                    *counts.entry(e.y).or_insert(0) += 1;
                }
                counts
            }
        }
    }
}

/// What one step did; used by the runner and by the composition tests.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepStats {
    pub batch: usize,
    pub replay: usize,
    pub conditioning: usize,
    pub posterior_fits: usize,
    pub lasso_runs: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub params: MlpParams,
    pub head: Option<LinearHead>,
    pub memory: Memory,
    pub seen_classes: BTreeSet<usize>,
    /// Classes of every task met so far, looked up by each example's task id.
    pub task_classes: BTreeMap<usize, Vec<usize>>,
    pub method: Method,
    pub hyper: Hyper,
    rng: ChaCha8Rng,
}

impl LearnerState {
    /// `dims` are the embedding widths `[d_in, ..., d_z]`; `num_classes` sizes
    /// the softmax head and the flat reservoir (`mem_per_class * num_classes`).
    pub fn new(method: Method, dims: &[usize], num_classes: usize, hyper: Hyper, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("num_classes must be positive".into()));
        }
        if !(hyper.eta >= 0.0 && hyper.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be non-negative, got {}", hyper.eta)));
        }
        if !(hyper.prior_a > 0.0) {
            return Err(Error::Config("prior_a must be positive".into()));
        }
        hyper.selection.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_mlp_with(dims, &mut rng)?;
        let head = (!method.uses_ccg_head()).then(|| LinearHead::init(num_classes, params.d_out(), &mut rng));
        let memory = if method.uses_lasso_memory() {
            Memory::PerClass(MemoryBuffer::new(hyper.mem_per_class))
        } else {
            Memory::Reservoir(Reservoir::new(hyper.mem_per_class * num_classes))
        };
        Ok(LearnerState {
            params,
            head,
            memory,
            seen_classes: BTreeSet::new(),
            task_classes: BTreeMap::new(),
            method,
            hyper,
            rng,
        })
    }

    pub fn d_z(&self) -> usize {
        self.params.d_out()
    }

    fn allowed_for(&self, e: &Example) -> Result<&[usize]> {
        self.task_classes
            .get(&e.t)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Contract(format!("example {} has unknown task id {}", e.id, e.t)))
    }

    fn admit_batch(&mut self, batch: &Batch) -> Result<()> {
        if let Some(e) = batch.examples.iter().find(|e| !batch.classes.contains(&e.y)) {
            return Err(Error::Contract(format!(
                "example {} with label {} is not in its task classes {:?}",
                e.id, e.y, batch.classes
            )));
        }
        if let Some(e) = batch.examples.iter().find(|e| e.t != batch.task_id) {
            return Err(Error::Contract(format!("example {} carries task id {} in a batch of task {}", e.id, e.t, batch.task_id)));
        }
        let mut classes = batch.classes.clone();
        classes.sort_unstable();
        classes.dedup();
        self.task_classes.insert(batch.task_id, classes);
        self.seen_classes.extend(batch.examples.iter().map(|e| e.y));
        Ok(())
    }

    /// Replay draw, loss on batch plus replay, and one SGD update of the
    /// embedding (and of the softmax head, if any). Memory is untouched.
    pub fn train_phase(&mut self, batch: &Batch) -> Result<StepStats> {
        self.admit_batch(batch)?;
        let memory = self.memory.examples();
        let mut stats = StepStats {
            batch: batch.examples.len(),
            ..StepStats::default()
        };
        if self.method.uses_ccg_head() {
            let (replay, rest) = sample_replay(&memory, self.hyper.replay_size, &mut self.rng);
            stats.replay = replay.len();
            stats.conditioning = rest.len();
            self.ccg_update(batch, &replay, &rest, &mut stats)?;
        } else {
            let (replay, _) = sample_uniform(&memory, self.hyper.replay_size, &mut self.rng);
            stats.replay = replay.len();
            self.softmax_update(batch, &replay, &mut stats)?;
        }
        Ok(stats)
    }

    fn ccg_update(&mut self, batch: &Batch, replay: &[Example], rest: &[Example], stats: &mut StepStats) -> Result<()> {
        let rest_x: Vec<Vec<f64>> = rest.iter().map(|e| e.x.clone()).collect();
        let rest_z = embed(&self.params, &rest_x)?;
        let post = fit_posteriors(
            rest_z.iter().zip(rest).map(|(z, e)| (z.as_slice(), e.y)),
            self.d_z(),
            self.hyper.prior_a,
        )?;
        stats.posterior_fits += 1;

        let train: Vec<&Example> = batch.examples.iter().chain(replay).collect();
        if train.is_empty() {
            return Ok(());
        }
        let xs: Vec<Vec<f64>> = train.iter().map(|e| e.x.clone()).collect();
        let (zs, cache) = forward(&self.params, &xs)?;
        let targets = train
            .iter()
            .zip(&zs)
            .map(|(e, z)| {
                Ok(Target {
                    z,
                    y: e.y,
                    allowed: self.allowed_for(e)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let report = loss_and_grad(&post, &targets)?;
        stats.loss = report.total_loss;
        let grad = backward(&self.params, &cache, &report.per_example_dl_dz)?;
        // the head reports d(-log p)/dz; ascend the log likelihood
        self.params = sgd_step(&self.params, &grad.scaled(-1.0), self.hyper.eta)?;
        Ok(())
    }

    fn softmax_update(&mut self, batch: &Batch, replay: &[Example], stats: &mut StepStats) -> Result<()> {
        let train: Vec<&Example> = batch.examples.iter().chain(replay).collect();
        if train.is_empty() {
            return Ok(());
        }
        let xs: Vec<Vec<f64>> = train.iter().map(|e| e.x.clone()).collect();
        let (zs, cache) = forward(&self.params, &xs)?;
        let head = self.head.as_ref().ok_or_else(|| Error::Contract("softmax head missing".into()))?;
        let mut head_grad_w = vec![0.0; head.weights.len()];
        let mut head_grad_b = vec![0.0; head.bias.len()];
        let mut dl_dz = Vec::with_capacity(train.len());
        let mut loss = 0.0;
        for (e, z) in train.iter().zip(&zs) {
            let allowed = self.allowed_for(e)?;
            let lp = head.log_probs(z, allowed)?;
            let mut g = vec![0.0; head.d_z];
            for (&c, l) in allowed.iter().zip(&lp) {
                // d(-log p_y)/dlogit_c = p_c - [c == y]
                let dlogit = l.exp() - if c == e.y { 1.0 } else { 0.0 };
                if c == e.y {
                    loss -= l;
                }
                head_grad_b[c] += dlogit;
                let row = c * head.d_z..(c + 1) * head.d_z;
                for ((gw, w), (gz, zv)) in head_grad_w[row.clone()]
                    .iter_mut()
                    .zip(&head.weights[row])
                    .zip(g.iter_mut().zip(z))
                {
                    *gw += dlogit * zv;
                    *gz += dlogit * w;
                }
            }
            dl_dz.push(g);
        }
        if !head_grad_w.iter().chain(&head_grad_b).all(|v| v.is_finite()) {
            return Err(Error::Numeric("non-finite head gradient".into()));
        }
        stats.loss = loss;
        let grad = backward(&self.params, &cache, &dl_dz)?;
        self.params = sgd_step(&self.params, &grad.scaled(-1.0), self.hyper.eta)?;
        let eta = self.hyper.eta;
        let head = self.head.as_mut().expect("checked above");
        head.weights.iter_mut().zip(&head_grad_w).for_each(|(w, g)| *w -= eta * g);
        head.bias.iter_mut().zip(&head_grad_b).for_each(|(b, g)| *b -= eta * g);
        Ok(())
    }

    /// Updates memory from the batch, with embeddings from the current params.
    pub fn memory_phase(&mut self, batch: &Batch, stats: &mut StepStats) -> Result<()> {
        match &mut self.memory {
            Memory::Reservoir(r) => {
                for e in &batch.examples {
                    r.offer(e.clone(), &mut self.rng);
                }
            }
            Memory::PerClass(buffer) => {
                let m = buffer.capacity_per_class();
                let mut classes: BTreeSet<usize> = buffer.classes().collect();
                classes.extend(batch.examples.iter().map(|e| e.y));
                for c in classes {
                    let incoming: Vec<Example> = batch.examples.iter().filter(|e| e.y == c).cloned().collect();
                    let stored = buffer.class(c).to_vec();
                    if incoming.is_empty() {
                        continue;
                    }
                    let kept = if incoming.len() + stored.len() <= m {
                        incoming.into_iter().chain(stored).collect()
                    } else {
                        let xs: Vec<Vec<f64>> = incoming.iter().chain(&stored).map(|e| e.x.clone()).collect();
                        let zs = embed(&self.params, &xs)?;
                        stats.lasso_runs += 1;
                        lasso_select(&incoming, &stored, &zs, m, &self.hyper.selection)?
                    };
                    buffer.set_class(c, kept)?;
                }
            }
        }
        Ok(())
    }

    /// One full update: training phase then memory phase.
    pub fn step(&mut self, batch: &Batch) -> Result<StepStats> {
        let mut stats = self.train_phase(batch)?;
        self.memory_phase(batch, &mut stats)?;
        Ok(stats)
    }

    /// Classifier for the current parameters. For the Gaussian head the
    /// posteriors are refitted on the whole memory.
    pub fn classifier(&self) -> Result<TrainedClassifier<'_>> {
        let head = match &self.head {
            Some(h) if !self.method.uses_ccg_head() => HeadKind::Softmax(h),
            _ => {
                let memory = self.memory.examples();
                let xs: Vec<Vec<f64>> = memory.iter().map(|e| e.x.clone()).collect();
                let zs = embed(&self.params, &xs)?;
                let post = fit_posteriors(
                    zs.iter().zip(&memory).map(|(z, e)| (z.as_slice(), e.y)),
                    self.d_z(),
                    self.hyper.prior_a,
                )?;
                HeadKind::Gaussian(post)
            }
        };
        Ok(TrainedClassifier {
            params: &self.params,
            head,
        })
    }

    /// Average accuracy over `tasks`.
    pub fn evaluate(&self, tasks: &[TaskSpec], scenario: Scenario) -> Result<EvalReport> {
        let seen: Vec<usize> = self.seen_classes.iter().copied().collect();
        evaluate_with(&self.classifier()?, tasks, scenario, &seen)
    }
}

fn check_method(state: &LearnerState, ok: bool, op: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Contract(format!("{op} called on a {} learner", state.method.name())))
    }
}

/// DeepCCG update: replay draw, posteriors on the rest of memory, conditional
/// marginal likelihood step, lasso memory selection.
pub fn deepccg_step(state: &mut LearnerState, batch: &Batch) -> Result<StepStats> {
    check_method(state, state.method == Method::DeepCcg, "deepccg_step")?;
    state.step(batch)
}

/// Experience replay with a softmax head and reservoir memory.
pub fn er_step(state: &mut LearnerState, batch: &Batch) -> Result<StepStats> {
    check_method(state, state.method == Method::ErReservoir, "er_step")?;
    state.step(batch)
}

/// The two hybrids of DeepCCG and ER.
pub fn ablation_step(state: &mut LearnerState, batch: &Batch) -> Result<StepStats> {
    check_method(
        state,
        matches!(state.method, Method::DeepCcgReservoir | Method::DeepCcgStandardHead),
        "ablation_step",
    )?;
    state.step(batch)
}

/// Anything that labels a batch of raw inputs given the admissible classes.
pub trait Classifier {
    fn classify(&self, xs: &[Vec<f64>], allowed: &[usize]) -> Result<Vec<usize>>;
}

#[derive(Debug, Clone)]
enum HeadKind<'a> {
    Gaussian(PosteriorSet),
    Softmax(&'a LinearHead),
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier<'a> {
    params: &'a MlpParams,
    head: HeadKind<'a>,
}

impl TrainedClassifier<'_> {
    pub fn posteriors(&self) -> Option<&PosteriorSet> {
        match &self.head {
            HeadKind::Gaussian(p) => Some(p),
            HeadKind::Softmax(_) => None,
        }
    }
}

impl Classifier for TrainedClassifier<'_> {
    fn classify(&self, xs: &[Vec<f64>], allowed: &[usize]) -> Result<Vec<usize>> {
        let zs = embedding::embed(self.params, xs)?;
        zs.iter()
            .map(|z| match &self.head {
                HeadKind::Gaussian(post) => ccg_head::predict(post, z, allowed),
                HeadKind::Softmax(head) => head.predict(z, allowed),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_task: Vec<f64>,
    pub average: f64,
}

/// Unweighted mean of per-task test accuracies. Task-incremental evaluation
/// restricts predictions to the task's classes, class-incremental to `seen`.
pub fn evaluate_with<C: Classifier + ?Sized>(
    clf: &C,
    tasks: &[TaskSpec],
    scenario: Scenario,
    seen: &[usize],
) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::Contract("no tasks to evaluate".into()));
    }
    let mut per_task = Vec::with_capacity(tasks.len());
    for task in tasks {
        if task.test.is_empty() {
            return Err(Error::Contract(format!("task {} has an empty test set", task.task_id)));
        }
        let allowed = match scenario {
            Scenario::TaskInc => task.classes.as_slice(),
            Scenario::ClassInc if seen.is_empty() => task.classes.as_slice(),
            Scenario::ClassInc => seen,
        };
        let xs: Vec<Vec<f64>> = task.test.iter().map(|e| e.x.clone()).collect();
        let preds = clf.classify(&xs, allowed)?;
        let correct = preds.iter().zip(&task.test).filter(|(p, e)| **p == e.y).count();
        per_task.push(correct as f64 / task.test.len() as f64);
    }
    let average = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok(EvalReport { per_task, average })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeRecord {
    pub step: usize,
    pub mean_rep_shift: f64,
    pub acc_delta: f64,
}

/// Mean embedding displacement of the probe task's test inputs between two
/// states, and the change in that task's accuracy.
pub fn rep_shift_probe(
    before: &LearnerState,
    after: &LearnerState,
    probe_task: &TaskSpec,
    scenario: Scenario,
    step: usize,
) -> Result<ProbeRecord> {
    if probe_task.test.is_empty() {
        return Err(Error::Contract("empty probe set".into()));
    }
    if before.params.dims() != after.params.dims() {
        return Err(Error::Shape("probe states have different architectures".into()));
    }
    let xs: Vec<Vec<f64>> = probe_task.test.iter().map(|e| e.x.clone()).collect();
    let zb = embed(&before.params, &xs)?;
    let za = embed(&after.params, &xs)?;
    let mean_rep_shift = zb.iter().zip(&za).map(|(a, b)| l2_dist(a, b)).sum::<f64>() / xs.len() as f64;
    let task = std::slice::from_ref(probe_task);
    let acc_before = before.evaluate(task, scenario)?.average;
    let acc_after = after.evaluate(task, scenario)?.average;
    Ok(ProbeRecord {
        step,
        mean_rep_shift,
        acc_delta: acc_after - acc_before,
    })
}
