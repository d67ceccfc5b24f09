//! Runs a config file end to end and writes the CSVs, as the binary does.
//!
//! ```bash
//! cargo run --release -p deepccg --example run_from_config -- configs/desk_scale.json out/
//! ```

use std::path::{Path, PathBuf};

use deepccg::config::parse_config;
use deepccg::experiment::{format_summary, run_experiment, write_report};

fn main() -> deepccg::Result<()> {
    let mut args = std::env::args().skip(1);
    let config = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/desk_scale.json"));
    let out_dir = args.next().map(PathBuf::from).unwrap_or_else(std::env::temp_dir);

    let cfg = parse_config(&std::fs::read_to_string(&config)?)?;
    let report = run_experiment(&cfg, config.parent().unwrap_or(Path::new(".")), 0)?;
    for path in write_report(&report, &out_dir, cfg.probe.enabled)? {
        println!("wrote {}", path.display());
    }
    print!("{}", format_summary(&report));
    Ok(())
}
