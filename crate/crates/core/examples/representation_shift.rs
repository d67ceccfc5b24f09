//! Measures how far the first task's embeddings move on each later update,
//! and how much its accuracy changes with them.

use std::path::Path;

use deepccg::config::parse_config;
use deepccg::experiment::{probe_slope, run_experiment};
use deepccg::trainer::Method;

fn main() -> deepccg::Result<()> {
    let cfg = parse_config(
        r#"{
            "dataset": {"synth": {"class_mean_scale": 3.0, "class_cov_scale": 1.0}},
            "regime": {"disjoint": 5},
            "scenario": "task_inc",
            "methods": ["deepccg", "er_reservoir"],
            "seeds": [0, 1, 2],
            "eta": 0.0025,
            "probe": {"enabled": true, "stride": 1}
        }"#,
    )?;
    let report = run_experiment(&cfg, Path::new("."), 0)?;
    for method in [Method::DeepCcg, Method::ErReservoir] {
        let rows: Vec<_> = report.probes.iter().filter(|p| p.method == method).collect();
        let shift = rows.iter().map(|p| p.record.mean_rep_shift).sum::<f64>() / rows.len() as f64;
        let moved = rows.iter().filter(|p| p.record.acc_delta != 0.0).count();
        let slope = probe_slope(&report, method);
        println!(
            "{:<14} {} probes, mean shift {shift:.4}, accuracy changed on {moved}, slope {}",
            method.name(),
            rows.len(),
            slope.map_or("undefined".to_string(), |s| format!("{s:.4}"))
        );
    }
    Ok(())
}
