//! DeepCCG, ER-reservoir and the two ablations on the same streams, in both
//! evaluation scenarios.

use std::path::Path;

use deepccg::config::parse_config;
use deepccg::experiment::{format_summary, run_experiment};

fn main() -> deepccg::Result<()> {
    for scenario in ["task_inc", "class_inc"] {
        let cfg = parse_config(&format!(
            r#"{{
                "dataset": {{"synth": {{}}}},
                "regime": {{"disjoint": 5}},
                "scenario": "{scenario}",
                "methods": ["deepccg", "er_reservoir", "deepccg_reservoir", "deepccg_standard_head"],
                "seeds": [0, 1, 2],
                "eta": 0.0125
            }}"#
        ))?;
        let report = run_experiment(&cfg, Path::new("."), 0)?;
        println!("{scenario} (memory {} per class):", cfg.mem_per_class());
        print!("{}", format_summary(&report));
        println!();
    }
    Ok(())
}
