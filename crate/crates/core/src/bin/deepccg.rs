use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deepccg::config::{parse_config, parse_synth_config};
use deepccg::error::{Error, Result};
use deepccg::experiment::{format_summary, run_experiment, write_report};
use deepccg::selftest::{run_selftest, Suite};
use deepccg::stream::{synth_gaussian_dataset, write_csv_dataset};

const EXIT_CONFIG: u8 = 1;
const EXIT_SELFTEST: u8 = 3;

#[derive(Parser)]
#[command(name = "deepccg", version, about = "Online continual learning with a class-conditional Gaussian head")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every method and seed listed in a config.
    Run {
        config: PathBuf,
        /// Directory for the CSV outputs; defaults to the working directory.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Added to every seed in the config.
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Run an oracle suite: posterior, predictive, gradient, selection, shift, reservoir or all.
    Selftest { suite: String },
    /// Write a synthetic Gaussian dataset as CSV.
    GenData { synth_config: PathBuf, out: PathBuf },
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn run(config: &Path, out_dir: &Path, seed_offset: u64) -> Result<()> {
    let cfg = parse_config(&read_text(config)?)?;
    let base = config.parent().unwrap_or(Path::new("."));
    let report = run_experiment(&cfg, base, seed_offset)?;
    for path in write_report(&report, out_dir, cfg.probe.enabled)? {
        eprintln!("wrote {}", path.display());
    }
    print!("{}", format_summary(&report));
    Ok(())
}

fn gen_data(synth_config: &Path, out: &Path) -> Result<()> {
    let synth = parse_synth_config(&read_text(synth_config)?)?;
    let data = synth_gaussian_dataset(&synth.spec(), synth.seed)?;
    let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = tempfile::NamedTempFile::new_in(dir)?;
    write_csv_dataset(&data, BufWriter::new(tmp.as_file()))?;
    tmp.persist(out).map_err(|e| Error::Io(e.error))?;
    eprintln!("wrote {} examples to {}", data.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.command {
        Command::Run {
            config,
            out_dir,
            seed_offset,
        } => run(&config, &out_dir, seed_offset),
        Command::GenData { synth_config, out } => gen_data(&synth_config, &out),
        Command::Selftest { suite } => match suite.parse::<Suite>().and_then(run_selftest) {
            Ok(report) => {
                println!("{report}");
                if report.passed() {
                    return ExitCode::SUCCESS;
                }
                return ExitCode::from(EXIT_SELFTEST);
            }
            Err(e) => Err(e),
        },
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
