//! Non-stationary classification streams.
//!
//! A dataset is a flat list of [`Example`]s. Task builders carve it into a
//! [`TaskSequence`] (disjoint class splits or a sliding window over a seeded
//! class ordering) and a [`StreamCursor`] serves the training examples batch by
//! batch, one task after another.

use std::collections::BTreeMap;
use std::io;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BATCH_SIZE: usize = 10;
pub const DEFAULT_TEST_FRACTION: f64 = 0.2;

/// One labelled input. `t` is the task identifier assigned by the task
/// builders; loaders leave it at 0. `id` is the position in the source dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: usize,
    pub x: Vec<f64>,
    pub y: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub task_id: usize,
    /// Sorted class labels of the task.
    pub classes: Vec<usize>,
    pub train: Vec<Example>,
    pub test: Vec<Example>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Disjoint,
    /// Task `i` covers classes `c_i..=c_{i+len}` of the class ordering.
    Window { len: usize },
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Regime::Disjoint => "disjoint",
            Regime::Window { .. } => "window",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    pub tasks: Vec<TaskSpec>,
    pub batch_size: usize,
    pub regime: Regime,
    /// The seeded class permutation the tasks were cut from.
    pub class_order: Vec<usize>,
}

impl TaskSequence {
    pub fn num_train_examples(&self) -> usize {
        self.tasks.iter().map(|t| t.train.len()).sum()
    }

    pub fn all_classes(&self) -> Vec<usize> {
        let mut c = self.class_order.clone();
        c.sort_unstable();
        c
    }

    pub fn batches(&self, seed: u64) -> Batches<'_> {
        Batches {
            seq: self,
            cursor: StreamCursor::new(seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub d_in: usize,
    pub num_classes: usize,
    pub per_class_count: usize,
    pub class_mean_scale: f64,
    pub class_cov_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            d_in: 8,
            num_classes: 10,
            per_class_count: 100,
            class_mean_scale: 6.0,
            class_cov_scale: 0.1,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_in == 0 || self.num_classes == 0 {
            return Err(Error::Config("d_in and num_classes must be positive".into()));
        }
        if self.per_class_count < 2 {
            return Err(Error::Config("per_class_count must be at least 2".into()));
        }
        if !(self.class_mean_scale > 0.0 && self.class_mean_scale.is_finite()) {
            return Err(Error::Config("class_mean_scale must be positive".into()));
        }
        if !(self.class_cov_scale > 0.0 && self.class_cov_scale.is_finite()) {
            return Err(Error::Config("class_cov_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Isotropic Gaussian blobs, one per class, at seeded random means of norm
/// `class_mean_scale` and covariance `class_cov_scale * I`.
pub fn synth_gaussian_dataset(spec: &SynthSpec, seed: u64) -> Result<Vec<Example>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sd = spec.class_cov_scale.sqrt();
    let mut data = Vec::with_capacity(spec.num_classes * spec.per_class_count);
    for class in 0..spec.num_classes {
        let mut dir: Vec<f64> = (0..spec.d_in).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        dir.iter_mut().for_each(|v| *v *= spec.class_mean_scale / norm);
        for _ in 0..spec.per_class_count {
            let x = dir
                .iter()
                .map(|m| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    m + sd * e
                })
                .collect();
            data.push(Example {
                id: data.len(),
                x,
                y: class,
                t: 0,
            });
        }
    }
    Ok(data)
}

fn csv_err(row: usize, e: csv::Error) -> Error {
    Error::Parse {
        row,
        msg: e.to_string(),
    }
}

/// Reads a dataset with header `y,x0,...,x{d-1}`. Rows are numbered from 1
/// (the first line after the header).
pub fn load_csv_dataset<R: io::Read>(source: R) -> Result<Vec<Example>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source);

    let header = reader.headers().map_err(|e| csv_err(0, e))?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Parse {
            row: 0,
            msg: "missing header".into(),
        });
    }
    if &header[0] != "y" {
        return Err(Error::Parse {
            row: 0,
            msg: format!("first column must be `y`, found `{}`", &header[0]),
        });
    }
    for (i, name) in header.iter().skip(1).enumerate() {
        if name != format!("x{i}") {
            return Err(Error::Parse {
                row: 0,
                msg: format!("expected column `x{i}`, found `{name}`"),
            });
        }
    }
    let d_in = header.len() - 1;

    let mut data = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let row = idx + 1;
        let record = record.map_err(|e| csv_err(row, e))?;
        if record.len() != d_in + 1 {
            return Err(Error::Parse {
                row,
                msg: format!("expected {} fields, found {}", d_in + 1, record.len()),
            });
        }
        let label: i64 = record[0].parse().map_err(|_| Error::Parse {
            row,
            msg: format!("label `{}` is not an integer", &record[0]),
        })?;
        if label < 0 {
            return Err(Error::Parse {
                row,
                msg: format!("negative label {label}"),
            });
        }
        let mut x = Vec::with_capacity(d_in);
        for (j, cell) in record.iter().skip(1).enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                msg: format!("feature x{j} `{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    msg: format!("feature x{j} is not finite"),
                });
            }
            x.push(v);
        }
        data.push(Example {
            id: data.len(),
            x,
            y: label as usize,
            t: 0,
        });
    }
    Ok(data)
}

/// Writes a dataset in the format read by [`load_csv_dataset`], LF line endings.
pub fn write_csv_dataset<W: io::Write>(data: &[Example], sink: W) -> Result<()> {
    let d_in = data.first().map_or(0, |e| e.x.len());
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    let mut header = vec!["y".to_string()];
    header.extend((0..d_in).map(|i| format!("x{i}")));
    w.write_record(&header).map_err(io::Error::from)?;
    for e in data {
        if e.x.len() != d_in {
            return Err(Error::Shape(format!(
                "example {} has {} features, expected {d_in}",
                e.id,
                e.x.len()
            )));
        }
        let mut rec = vec![e.y.to_string()];
        rec.extend(e.x.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn group_by_class(data: &[Example]) -> BTreeMap<usize, Vec<Example>> {
    let mut by_class: BTreeMap<usize, Vec<Example>> = BTreeMap::new();
    for e in data {
        by_class.entry(e.y).or_default().push(e.clone());
    }
    by_class
}

fn check_test_fraction(f: f64) -> Result<()> {
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Config(format!("test_fraction must be in (0, 1), got {f}")));
    }
    Ok(())
}

/// Shuffled stratum split: at least one example on each side.
fn split_train_test(
    mut examples: Vec<Example>,
    test_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<Example>, Vec<Example>) {
    examples.shuffle(rng);
    let n = examples.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let train = examples.split_off(n_test);
    (train, examples)
}

fn assign_task(examples: &mut [Example], task: usize) {
    examples.iter_mut().for_each(|e| e.t = task);
}

/// Partitions the classes of `data` evenly across `num_tasks` tasks.
pub fn build_disjoint_tasks(
    data: &[Example],
    num_tasks: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<TaskSequence> {
    check_test_fraction(test_fraction)?;
    let by_class = group_by_class(data);
    let k = by_class.len();
    if num_tasks == 0 || k == 0 || !k.is_multiple_of(num_tasks) {
        return Err(Error::Config(format!(
            "{k} classes cannot be split evenly into {num_tasks} tasks"
        )));
    }
    if let Some((c, v)) = by_class.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::Config(format!("class {c} has only {} example(s)", v.len())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut class_order: Vec<usize> = by_class.keys().copied().collect();
    class_order.shuffle(&mut rng);

    let per_task = k / num_tasks;
    let mut tasks = Vec::with_capacity(num_tasks);
    for (task_id, chunk) in class_order.chunks(per_task).enumerate() {
        let mut classes = chunk.to_vec();
        classes.sort_unstable();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for c in &classes {
            let (tr, te) = split_train_test(by_class[c].clone(), test_fraction, &mut rng);
            train.extend(tr);
            test.extend(te);
        }
        assign_task(&mut train, task_id);
        assign_task(&mut test, task_id);
        tasks.push(TaskSpec {
            task_id,
            classes,
            train,
            test,
        });
    }
    Ok(TaskSequence {
        tasks,
        batch_size: DEFAULT_BATCH_SIZE,
        regime: Regime::Disjoint,
        class_order,
    })
}

/// Sliding window over a seeded class ordering: task `i` holds classes
/// `c_i..=c_{i+window_len}`, so there are `K - window_len` tasks.
///
/// Each class's examples are divided evenly among the windows containing it
/// (rounding down); a window then takes the same number of examples from each
/// of its classes, the smallest share among them. No example is used twice.
pub fn build_shifting_window(
    data: &[Example],
    window_len: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<TaskSequence> {
    check_test_fraction(test_fraction)?;
    let by_class = group_by_class(data);
    let k = by_class.len();
    if window_len == 0 || window_len >= k {
        return Err(Error::Config(format!(
            "window_len must be in [1, {}), got {window_len}",
            k
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut class_order: Vec<usize> = by_class.keys().copied().collect();
    class_order.shuffle(&mut rng);

    let num_tasks = k - window_len;
    let first_window = |p: usize| p.saturating_sub(window_len);
    let last_window = |p: usize| p.min(num_tasks - 1);

    // chunks[p][w - first_window(p)] = examples of class at position p reserved for window w
    let mut chunks: Vec<Vec<Vec<Example>>> = Vec::with_capacity(k);
    for (p, c) in class_order.iter().enumerate() {
        let occ = last_window(p) - first_window(p) + 1;
        let mut ex = by_class[c].clone();
        ex.shuffle(&mut rng);
        let share = ex.len() / occ;
        chunks.push(ex.chunks(share.max(1)).take(occ).map(|s| s.to_vec()).collect());
        if share == 0 {
            return Err(Error::Config(format!(
                "class {c} has {} examples, fewer than the {occ} windows it appears in",
                ex.len()
            )));
        }
    }

    let mut tasks = Vec::with_capacity(num_tasks);
    for w in 0..num_tasks {
        let positions = w..=w + window_len;
        let q = positions
            .clone()
            .map(|p| chunks[p][w - first_window(p)].len())
            .min()
            .unwrap_or(0);
        if q < 2 {
            return Err(Error::Config(format!(
                "window {w} would hold {q} example(s) per class; need at least 2 for a train/test split"
            )));
        }
        let mut classes: Vec<usize> = positions.clone().map(|p| class_order[p]).collect();
        classes.sort_unstable();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for p in positions {
            let share = chunks[p][w - first_window(p)][..q].to_vec();
            let (tr, te) = split_train_test(share, test_fraction, &mut rng);
            train.extend(tr);
            test.extend(te);
        }
        assign_task(&mut train, w);
        assign_task(&mut test, w);
        tasks.push(TaskSpec {
            task_id: w,
            classes,
            train,
            test,
        });
    }
    Ok(TaskSequence {
        tasks,
        batch_size: DEFAULT_BATCH_SIZE,
        regime: Regime::Window { len: window_len },
        class_order,
    })
}

/// Per-feature standardisation with statistics taken from the first task's
/// training data only. Returns the `(mean, std)` pairs that were applied.
pub fn standardize_on_first_task(seq: &mut TaskSequence) -> Vec<(f64, f64)> {
    let Some(first) = seq.tasks.first() else {
        return Vec::new();
    };
    let d = first.train.first().map_or(0, |e| e.x.len());
    let n = first.train.len() as f64;
    let stats: Vec<(f64, f64)> = (0..d)
        .map(|j| {
            let mean = first.train.iter().map(|e| e.x[j]).sum::<f64>() / n;
            let var = first.train.iter().map(|e| (e.x[j] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            (mean, if sd > 1e-12 { sd } else { 1.0 })
        })
        .collect();
    for task in &mut seq.tasks {
        for e in task.train.iter_mut().chain(task.test.iter_mut()) {
            for (v, (m, s)) in e.x.iter_mut().zip(&stats) {
                *v = (*v - m) / s;
            }
        }
    }
    stats
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub task_id: usize,
    /// Classes of the task the batch came from.
    pub classes: Vec<usize>,
    pub examples: Vec<Example>,
}

/// Position in a [`TaskSequence`]. Each task's training set is shuffled with
/// the cursor's generator when the cursor enters it.
#[derive(Debug, Clone)]
pub struct StreamCursor {
    task: usize,
    pos: usize,
    order: Option<Vec<usize>>,
    rng: ChaCha8Rng,
}

impl StreamCursor {
    pub fn new(seed: u64) -> Self {
        StreamCursor {
            task: 0,
            pos: 0,
            order: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn task_index(&self) -> usize {
        self.task
    }
}

/// Next batch of the stream, or `None` once every task has been served.
pub fn next_batch(seq: &TaskSequence, cursor: &mut StreamCursor) -> Option<Batch> {
    loop {
        let task = seq.tasks.get(cursor.task)?;
        let order = cursor.order.get_or_insert_with(|| {
            let mut o: Vec<usize> = (0..task.train.len()).collect();
            o.shuffle(&mut cursor.rng);
            o
        });
        if cursor.pos >= order.len() {
            cursor.task += 1;
            cursor.pos = 0;
            cursor.order = None;
            continue;
        }
        let end = (cursor.pos + seq.batch_size.max(1)).min(order.len());
        let examples = order[cursor.pos..end]
            .iter()
            .map(|&i| task.train[i].clone())
            .collect();
        cursor.pos = end;
        return Some(Batch {
            task_id: task.task_id,
            classes: task.classes.clone(),
            examples,
        });
    }
}

pub struct Batches<'a> {
    seq: &'a TaskSequence,
    cursor: StreamCursor,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        next_batch(self.seq, &mut self.cursor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn labelled(classes: usize, per_class: usize) -> Vec<Example> {
        let mut out = Vec::new();
        for c in 0..classes {
            for i in 0..per_class {
                out.push(Example {
                    id: out.len(),
                    x: vec![c as f64, i as f64],
                    y: c,
                    t: 0,
                });
            }
        }
        out
    }

    #[test]
    fn synth_counts_and_determinism() {
        let spec = SynthSpec {
            d_in: 2,
            num_classes: 2,
            per_class_count: 4,
            class_mean_scale: 3.0,
            class_cov_scale: 0.1,
        };
        let a = synth_gaussian_dataset(&spec, 0).unwrap();
        assert_eq!(a.len(), 8);
        assert_eq!(a.iter().filter(|e| e.y == 0).count(), 4);
        assert_eq!(a.iter().filter(|e| e.y == 1).count(), 4);
        let b = synth_gaussian_dataset(&spec, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synth_rejects_bad_spec() {
        let spec = SynthSpec {
            per_class_count: 1,
            ..SynthSpec::default()
        };
        assert!(matches!(synth_gaussian_dataset(&spec, 0), Err(Error::Config(_))));
    }

    #[test]
    fn csv_parse() {
        let data = load_csv_dataset("y,x0,x1\n0,1.0,2.0\n1,3.0,4.0".as_bytes()).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data[1].x, vec![3.0, 4.0]);
        assert_eq!(data[1].y, 1);

        let crlf = load_csv_dataset("y,x0\r\n2,0.5\r\n".as_bytes()).unwrap();
        assert_eq!(crlf[0].x, vec![0.5]);

        assert!(load_csv_dataset("y,x0,x1\n".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn csv_errors_name_the_row() {
        let err = load_csv_dataset("y,x0,x1\n0,1.0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }), "{err}");
        let err = load_csv_dataset("y,x0\n0,1\n1,abc\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
        let err = load_csv_dataset("y,x0\n-1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, .. }), "{err}");
        assert!(load_csv_dataset("label,x0\n".as_bytes()).is_err());
    }

    #[test]
    fn disjoint_split_shapes() {
        let data = labelled(10, 10);
        let seq = build_disjoint_tasks(&data, 5, 0.2, 3).unwrap();
        assert_eq!(seq.tasks.len(), 5);
        let mut seen = BTreeSet::new();
        for t in &seq.tasks {
            assert_eq!(t.classes.len(), 2);
            for c in &t.classes {
                assert!(seen.insert(*c), "class {c} in two tasks");
            }
            for e in t.train.iter().chain(&t.test) {
                assert!(t.classes.contains(&e.y));
                assert_eq!(e.t, t.task_id);
            }
            assert_eq!(t.test.len(), 4);
        }

        let single = build_disjoint_tasks(&data, 1, 0.2, 3).unwrap();
        assert_eq!(single.tasks.len(), 1);
        assert_eq!(single.tasks[0].classes, (0..10).collect::<Vec<_>>());

        assert!(matches!(build_disjoint_tasks(&data, 3, 0.2, 3), Err(Error::Config(_))));
    }

    #[test]
    fn window_shapes() {
        let data = labelled(10, 30);
        let seq = build_shifting_window(&data, 2, 0.2, 1).unwrap();
        assert_eq!(seq.tasks.len(), 8);
        for pair in seq.tasks.windows(2) {
            let a: BTreeSet<_> = pair[0].classes.iter().collect();
            let b: BTreeSet<_> = pair[1].classes.iter().collect();
            assert_eq!(a.intersection(&b).count(), 2);
        }
        for (i, t) in seq.tasks.iter().enumerate() {
            let mut expected: Vec<usize> = seq.class_order[i..=i + 2].to_vec();
            expected.sort_unstable();
            assert_eq!(t.classes, expected);
            let counts: BTreeSet<usize> = t
                .classes
                .iter()
                .map(|c| t.train.iter().chain(&t.test).filter(|e| e.y == *c).count())
                .collect();
            assert_eq!(counts.len(), 1, "unequal per-class counts in task {i}");
        }

        let full = build_shifting_window(&data, 9, 0.2, 1).unwrap();
        assert_eq!(full.tasks.len(), 1);
        assert_eq!(full.tasks[0].classes.len(), 10);

        assert!(build_shifting_window(&labelled(10, 4), 2, 0.2, 1).is_err());
        assert!(build_shifting_window(&data, 10, 0.2, 1).is_err());
    }

    #[test]
    fn batches_follow_tasks() {
        let data = labelled(2, 31);
        let mut seq = build_disjoint_tasks(&data, 2, 0.2, 0).unwrap();
        seq.batch_size = 10;
        assert_eq!(seq.tasks[0].train.len(), 25);
        let sizes: Vec<(usize, usize)> = seq.batches(9).map(|b| (b.task_id, b.examples.len())).collect();
        assert_eq!(sizes, vec![(0, 10), (0, 10), (0, 5), (1, 10), (1, 10), (1, 5)]);
        for b in seq.batches(9) {
            assert!(b.examples.iter().all(|e| e.t == b.task_id));
        }
        let a: Vec<_> = seq.batches(4).collect();
        let b: Vec<_> = seq.batches(4).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn standardization_uses_first_task() {
        let data = labelled(4, 10);
        let mut seq = build_disjoint_tasks(&data, 2, 0.2, 0).unwrap();
        let stats = standardize_on_first_task(&mut seq);
        assert_eq!(stats.len(), 2);
        let t0 = &seq.tasks[0].train;
        let m: f64 = t0.iter().map(|e| e.x[1]).sum::<f64>() / t0.len() as f64;
        assert!(m.abs() < 1e-12);
    }
}
