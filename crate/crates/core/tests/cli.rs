use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use deepccg::stream::load_csv_dataset;

fn deepccg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepccg")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const SMALL_RUN: &str = r#"{
    "dataset": {"synth": {"d_in": 4, "num_classes": 4, "per_class_count": 30, "seed": 3}},
    "regime": {"disjoint": 2},
    "scenario": "task_inc",
    "methods": ["deepccg", "er_reservoir"],
    "seeds": [0, 1],
    "eta": 0.0125,
    "mlp": {"hidden": [16], "d_z": 4},
    "probe": {"enabled": true, "stride": 4}
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn run_writes_reports_and_repeats_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", SMALL_RUN);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    for out in [&a, &b] {
        let res = deepccg(&["run", &cfg, "--out-dir", out.to_str().unwrap()]);
        assert_eq!(code(&res), 0, "{}", stderr(&res));
        assert!(String::from_utf8_lossy(&res.stdout).contains("deepccg"));
    }
    for f in ["metrics.csv", "probes.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("run_id,method,scenario,regime,seed,average_accuracy\n"));
    assert_eq!(metrics.lines().count(), 5);
    assert!(fs::read_to_string(a.join("timing.csv")).unwrap().starts_with("run_id,wall_time_seconds"));
}

#[test]
fn seed_offset_changes_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "run.json", SMALL_RUN);
    let res = deepccg(&["run", &cfg, "--out-dir", dir.path().to_str().unwrap(), "--seed-offset", "7"]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.contains("deepccg-seed7") && metrics.contains("deepccg-seed8"), "{metrics}");
}

#[test]
fn config_errors_exit_one_and_name_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write(dir.path(), "typo.json", &SMALL_RUN.replace("\"eta\"", "\"etaa\""));
    let res = deepccg(&["run", &typo]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("etaa"), "{}", stderr(&res));

    let nested = write(dir.path(), "nested.json", &SMALL_RUN.replace("\"d_z\": 4", "\"d_z\": -4"));
    let res = deepccg(&["run", &nested]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("mlp.d_z"), "{}", stderr(&res));

    let bad_eta = write(dir.path(), "eta.json", &SMALL_RUN.replace("0.0125", "-1.0"));
    let res = deepccg(&["run", &bad_eta]);
    assert_eq!(code(&res), 1);
    assert!(stderr(&res).contains("eta"), "{}", stderr(&res));

    assert_eq!(code(&deepccg(&["run", "/nonexistent/config.json"])), 1);
    assert_eq!(code(&deepccg(&["selftest", "everything"])), 1);
    assert_eq!(code(&deepccg(&["frobnicate"])), 1);
    assert_eq!(code(&deepccg(&["--help"])), 0);
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hot.json", &SMALL_RUN.replace("0.0125", "1e6"));
    let res = deepccg(&["run", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&res), 2, "{}", stderr(&res));
    assert!(stderr(&res).contains("diverged"), "{}", stderr(&res));
    assert!(!dir.path().join("metrics.csv").exists());
}

#[test]
fn selftest_suites_pass() {
    for suite in ["posterior", "gradient", "selection", "reservoir"] {
        let res = deepccg(&["selftest", suite]);
        assert_eq!(code(&res), 0, "{suite}: {}", String::from_utf8_lossy(&res.stdout));
    }
}

#[test]
fn gen_data_round_trips_through_a_csv_run() {
    let dir = tempfile::tempdir().unwrap();
    let synth = write(
        dir.path(),
        "synth.json",
        r#"{"d_in": 3, "num_classes": 4, "per_class_count": 25, "seed": 9}"#,
    );
    let csv = dir.path().join("data.csv");
    let res = deepccg(&["gen-data", &synth, csv.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let data = load_csv_dataset(fs::File::open(&csv).unwrap()).unwrap();
    assert_eq!(data.len(), 100);
    assert!(data.iter().all(|e| e.x.len() == 3 && e.y < 4));

    let again = dir.path().join("again.csv");
    deepccg(&["gen-data", &synth, again.to_str().unwrap()]);
    assert_eq!(fs::read(&csv).unwrap(), fs::read(&again).unwrap());

    // Dataset paths resolve against the config's directory.
    let cfg = SMALL_RUN.replace(
        r#"{"synth": {"d_in": 4, "num_classes": 4, "per_class_count": 30, "seed": 3}}"#,
        r#"{"csv": "data.csv"}"#,
    );
    let cfg = write(dir.path(), "csv_run.json", &cfg);
    let out = dir.path().join("out");
    fs::create_dir_all(&out).unwrap();
    let res = deepccg(&["run", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));

    fs::write(&csv, "label,x0\n1,notanumber\n").unwrap();
    let res = deepccg(&["run", &cfg, "--out-dir", out.to_str().unwrap()]);
    assert_eq!(code(&res), 1, "{}", stderr(&res));
}

#[test]
fn window_regime_runs_class_incremental() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = SMALL_RUN
        .replace("{\"disjoint\": 2}", "{\"window\": 2}")
        .replace("task_inc", "class_inc")
        .replace("0.0125", "0.00625");
    let cfg = write(dir.path(), "window.json", &cfg);
    let res = deepccg(&["run", &cfg, "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&res), 0, "{}", stderr(&res));
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.lines().skip(1).all(|l| l.contains("class_inc") && l.contains("window")), "{metrics}");
}
