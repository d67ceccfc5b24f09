//! Runs every (method, seed) pair of a config over its stream and writes the
//! metrics, probe and timing CSVs.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use tempfile::NamedTempFile;

use crate::config::{DatasetConfig, ExperimentConfig, RegimeConfig};
use crate::error::{Error, Result};
use crate::stream::{
    build_disjoint_tasks, build_shifting_window, load_csv_dataset, standardize_on_first_task, synth_gaussian_dataset,
    Example, TaskSequence,
};
use crate::trainer::{rep_shift_probe, LearnerState, Method, ProbeRecord, Scenario};

pub const METRICS_FILE: &str = "metrics.csv";
pub const PROBES_FILE: &str = "probes.csv";
pub const TIMING_FILE: &str = "timing.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub method: Method,
    pub scenario: Scenario,
    pub regime: &'static str,
    pub seed: u64,
    pub average_accuracy: f64,
    pub per_task: Vec<f64>,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub run_id: String,
    pub method: Method,
    pub record: ProbeRecord,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    pub runs: Vec<RunSummary>,
    pub probes: Vec<ProbeRow>,
}

/// Mean and standard error of the average accuracy over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub mean: f64,
    pub std_err: f64,
}

pub fn run_id(method: Method, seed: u64) -> String {
    format!("{}-seed{}", method.name(), seed)
}

/// Loads the configured dataset; CSV paths resolve against `base_dir`.
pub fn load_dataset(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Vec<Example>> {
    match &cfg.dataset {
        DatasetConfig::Synth(s) => synth_gaussian_dataset(&s.spec(), s.seed),
        DatasetConfig::Csv(path) => {
            let path = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            let file = fs::File::open(&path)
                .map_err(|e| Error::Config(format!("dataset {}: {e}", path.display())))?;
            load_csv_dataset(file)
        }
    }
}

/// Seeds of one run: task split, batch order, learner.
fn derive_seeds(seed: u64) -> (u64, u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (rng.random(), rng.random(), rng.random())
}

pub fn build_stream(cfg: &ExperimentConfig, data: &[Example], seed: u64) -> Result<TaskSequence> {
    let (split_seed, _, _) = derive_seeds(seed);
    let mut seq = match cfg.regime {
        RegimeConfig::Disjoint(n) => build_disjoint_tasks(data, n, cfg.test_fraction, split_seed)?,
        RegimeConfig::Window(l) => build_shifting_window(data, l, cfg.test_fraction, split_seed)?,
    };
    seq.batch_size = cfg.batch_size;
    if cfg.standardize {
        standardize_on_first_task(&mut seq);
    }
    Ok(seq)
}

/// Trains one method on one seed's stream, visiting every batch once, and
/// evaluates at the end. Probes run between the training and memory phases.
pub fn run_single(
    cfg: &ExperimentConfig,
    data: &[Example],
    method: Method,
    seed: u64,
) -> Result<(RunSummary, Vec<ProbeRecord>)> {
    let start = Instant::now();
    let seq = build_stream(cfg, data, seed)?;
    let (_, order_seed, learner_seed) = derive_seeds(seed);
    let d_in = data
        .first()
        .map(|e| e.x.len())
        .ok_or_else(|| Error::Config("dataset is empty".into()))?;
    let num_classes = data.iter().map(|e| e.y).max().unwrap_or(0) + 1;
    let mut learner = LearnerState::new(method, &cfg.mlp_dims(d_in), num_classes, cfg.hyper(), learner_seed)?;

    let first_task = seq.tasks.first().map(|t| t.task_id);
    let mut probes = Vec::new();
    let mut probe_counter = 0usize;
    let mut steps = 0;
    for (step, batch) in seq.batches(order_seed).enumerate() {
        steps = step + 1;
        let probe_due = cfg.probe.enabled && Some(batch.task_id) != first_task && {
            probe_counter += 1;
            (probe_counter - 1).is_multiple_of(cfg.probe.stride)
        };
        let before = probe_due.then(|| learner.clone());
        let mut stats = learner.train_phase(&batch).map_err(|e| diverged(e, method, seed, step))?;
        if let Some(before) = before {
            let probe = rep_shift_probe(&before, &learner, &seq.tasks[0], cfg.scenario, step);
            probes.push(probe.map_err(|e| diverged(e, method, seed, step))?);
        }
        learner
            .memory_phase(&batch, &mut stats)
            .map_err(|e| diverged(e, method, seed, step))?;
    }
    let eval = learner
        .evaluate(&seq.tasks, cfg.scenario)
        .map_err(|e| diverged(e, method, seed, steps))?;
    Ok((
        RunSummary {
            run_id: run_id(method, seed),
            method,
            scenario: cfg.scenario,
            regime: match cfg.regime {
                RegimeConfig::Disjoint(_) => "disjoint",
                RegimeConfig::Window(_) => "window",
            },
            seed,
            average_accuracy: eval.average,
            per_task: eval.per_task,
            wall_time_seconds: start.elapsed().as_secs_f64(),
        },
        probes,
    ))
}

fn diverged(e: Error, method: Method, seed: u64, step: usize) -> Error {
    match e {
        Error::Numeric(msg) => Error::Numeric(format!(
            "{} seed {seed}, batch {step}: {msg} (training diverged; try a smaller eta)",
            method.name()
        )),
        other => other,
    }
}

/// Every (method, seed) pair, in parallel. Output order follows the config.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path, seed_offset: u64) -> Result<MetricsReport> {
    cfg.validate()?;
    let data = load_dataset(cfg, base_dir)?;
    let jobs: Vec<(Method, u64)> = cfg
        .methods
        .iter()
        .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s.wrapping_add(seed_offset))))
        .collect();
    let results = jobs
        .par_iter()
        .map(|&(method, seed)| run_single(cfg, &data, method, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut report = MetricsReport::default();
    for (summary, probes) in results {
        report.probes.extend(probes.into_iter().map(|record| ProbeRow {
            run_id: summary.run_id.clone(),
            method: summary.method,
            record,
        }));
        report.runs.push(summary);
    }
    Ok(report)
}

pub fn metrics_csv(report: &MetricsReport) -> String {
    let mut out = String::from("run_id,method,scenario,regime,seed,average_accuracy\n");
    for r in &report.runs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.run_id,
            r.method.name(),
            r.scenario.name(),
            r.regime,
            r.seed,
            r.average_accuracy
        );
    }
    out
}

pub fn probes_csv(report: &MetricsReport) -> String {
    let mut out = String::from("run_id,step,mean_rep_shift,acc_delta\n");
    for p in &report.probes {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            p.run_id, p.record.step, p.record.mean_rep_shift, p.record.acc_delta
        );
    }
    out
}

pub fn timing_csv(report: &MetricsReport) -> String {
    let mut out = String::from("run_id,wall_time_seconds\n");
    for r in &report.runs {
        let _ = writeln!(out, "{},{}", r.run_id, r.wall_time_seconds);
    }
    out
}

/// Writes the CSVs into `out_dir`. All files are staged as temporaries and
/// only renamed into place once every one has been written.
pub fn write_report(report: &MetricsReport, out_dir: &Path, with_probes: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut files = vec![(METRICS_FILE, metrics_csv(report)), (TIMING_FILE, timing_csv(report))];
    if with_probes {
        files.push((PROBES_FILE, probes_csv(report)));
    }
    let mut staged = Vec::with_capacity(files.len());
    for (name, body) in files {
        let mut tmp = NamedTempFile::new_in(out_dir)?;
        tmp.write_all(body.as_bytes())?;
        tmp.as_file().sync_all()?;
        staged.push((tmp, out_dir.join(name)));
    }
    let mut written = Vec::with_capacity(staged.len());
    for (tmp, dest) in staged {
        if let Err(e) = tmp.persist(&dest) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            return Err(e.error.into());
        }
        written.push(dest);
    }
    Ok(written)
}

pub fn summarize(report: &MetricsReport) -> Vec<MethodSummary> {
    let mut methods: Vec<Method> = Vec::new();
    for r in &report.runs {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let accs: Vec<f64> = report
                .runs
                .iter()
                .filter(|r| r.method == method)
                .map(|r| r.average_accuracy)
                .collect();
            let n = accs.len() as f64;
            let mean = accs.iter().sum::<f64>() / n;
            let std_err = if accs.len() > 1 {
                (accs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
            } else {
                0.0
            };
            MethodSummary {
                method,
                runs: accs.len(),
                mean,
                std_err,
            }
        })
        .collect()
}

pub fn format_summary(report: &MetricsReport) -> String {
    let mut out = String::new();
    for s in summarize(report) {
        let _ = writeln!(
            out,
            "{:<24} {:>6.2} ± {:.2}  ({} run{})",
            s.method.name(),
            100.0 * s.mean,
            100.0 * s.std_err,
            s.runs,
            if s.runs == 1 { "" } else { "s" }
        );
    }
    out
}

/// Least-squares slope of `acc_delta` against `mean_rep_shift` over the probe
/// rows of one method. `None` with fewer than two distinct shifts.
pub fn probe_slope(report: &MetricsReport, method: Method) -> Option<f64> {
    let pts: Vec<(f64, f64)> = report
        .probes
        .iter()
        .filter(|p| p.method == method)
        .map(|p| (p.record.mean_rep_shift, p.record.acc_delta))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small_config(extra: &str) -> ExperimentConfig {
        parse_config(&format!(
            r#"{{
                "dataset": {{"synth": {{"d_in": 4, "num_classes": 4, "per_class_count": 30}}}},
                "regime": {{"disjoint": 2}},
                "scenario": "task_inc",
                "methods": ["deepccg"],
                "seeds": [0, 1],
                "mlp": {{"hidden": [16], "d_z": 4}}
                {extra}
            }}"#
        ))
        .unwrap()
    }

    #[test]
    fn two_seeds_two_rows_and_reproducible_bytes() {
        let cfg = small_config("");
        let a = run_experiment(&cfg, Path::new("."), 0).unwrap();
        assert_eq!(a.runs.len(), 2);
        let b = run_experiment(&cfg, Path::new("."), 0).unwrap();
        assert_eq!(metrics_csv(&a), metrics_csv(&b));
        assert!(metrics_csv(&a).lines().count() == 3);
        let shifted = run_experiment(&cfg, Path::new("."), 5).unwrap();
        assert_eq!(shifted.runs[0].seed, 5);
    }

    #[test]
    fn probe_rows_follow_cadence() {
        let cfg = small_config(r#", "probe": {"enabled": true, "stride": 1}"#);
        let data = load_dataset(&cfg, Path::new(".")).unwrap();
        let seq = build_stream(&cfg, &data, 0).unwrap();
        let later: usize = seq.tasks[1..]
            .iter()
            .map(|t| t.train.len().div_ceil(cfg.batch_size))
            .sum();
        let (_, probes) = run_single(&cfg, &data, Method::DeepCcg, 0).unwrap();
        assert_eq!(probes.len(), later);

        let strided = small_config(r#", "probe": {"enabled": true, "stride": 3}"#);
        let (_, sparse) = run_single(&strided, &data, Method::DeepCcg, 0).unwrap();
        assert_eq!(sparse.len(), later.div_ceil(3));
    }

    #[test]
    fn report_files_are_written_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small_config(r#", "probe": {"enabled": true, "stride": 4}"#);
        let report = run_experiment(&cfg, Path::new("."), 0).unwrap();
        let files = write_report(&report, dir.path(), true).unwrap();
        assert_eq!(files.len(), 3);
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 3, "stray temporaries: {names:?}");
        let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert!(metrics.starts_with("run_id,method,scenario,regime,seed,average_accuracy\n"));
        assert!(!metrics.contains('\r'));
    }

    #[test]
    fn slope_of_a_line() {
        let row = |x: f64, y: f64| ProbeRow {
            run_id: "r".into(),
            method: Method::DeepCcg,
            record: ProbeRecord { step: 0, mean_rep_shift: x, acc_delta: y },
        };
        let report = MetricsReport {
            runs: vec![],
            probes: vec![row(0.0, 1.0), row(1.0, -1.0), row(2.0, -3.0)],
        };
        assert!((probe_slope(&report, Method::DeepCcg).unwrap() + 2.0).abs() < 1e-12);
        assert_eq!(probe_slope(&report, Method::ErReservoir), None);
    }
}
