use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dsg::harness::{self, read_json, ExperimentConfig, ScenarioConfig, MANIFEST_FILE};
use dsg::Error;

#[derive(Parser)]
#[command(name = "dsgsim", version, about = "Simulate learning in dynamic Stackelberg games")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a game document (with theta_star) from a scenario spec.
    Generate {
        /// Scenario spec JSON, e.g. {"kind": "random", "layer_sizes": [1, 2], "n": 3, "m": 3, "p": 2}.
        #[arg(long)]
        config: PathBuf,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run an experiment config (or rerun the config inside a manifest).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Print mistake-budget checks and final metrics from a manifest.
    Report {
        /// Manifest file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory holding manifest.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Exit status for a failed command.
fn status(err: &Error) -> u8 {
    match err {
        Error::Config { .. } | Error::Io { .. } | Error::SpecError(_) | Error::MalformedGame(_) => 2,
        _ => 3,
    }
}

fn generate(config: &Path, out: Option<&Path>, seed: u64) -> dsg::Result<()> {
    let scenario: ScenarioConfig = read_json(config)?;
    let (inst, _) = scenario.instantiate(seed)?;
    let text = serde_json::to_string_pretty(&inst.document()).expect("game documents serialize");
    match out {
        Some(path) => fs::write(path, text + "\n").map_err(|source| Error::Io { path: path.to_path_buf(), source }),
        None => match writeln!(io::stdout().lock(), "{text}") {
            Err(e) if e.kind() != io::ErrorKind::BrokenPipe => {
                Err(Error::Io { path: PathBuf::from("<stdout>"), source: e })
            }
            _ => Ok(()),
        },
    }
}

fn run(config: &Path, out: Option<&Path>, seed: Option<u64>, threads: Option<usize>) -> dsg::Result<bool> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    let dir = harness::output_dir(out, &cfg);
    let manifest = harness::run_experiment(&cfg, &dir, threads)?;
    for cell in &manifest.cells {
        println!(
            "seed {} {}: final avg regret {} avg reward {} mistakes {}",
            cell.seed,
            cell.learner,
            harness::fmt_sig(cell.final_avg_regret),
            harness::fmt_sig(cell.final_avg_cum_reward),
            cell.total_mistakes
        );
    }
    println!("wrote {}", dir.display());
    Ok(manifest.bounds_ok)
}

fn report(config: Option<&Path>, out: Option<&Path>) -> dsg::Result<bool> {
    let path = match (config, out) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(dir)) => dir.join(MANIFEST_FILE),
        (None, None) => {
            return Err(Error::Config { path: PathBuf::from("."), message: "pass --config <manifest> or --out <dir>".into() })
        }
    };
    let manifest = harness::load_manifest(&path)?;
    for cell in &manifest.cells {
        print!("seed {} {}", cell.seed, cell.bounds);
        if cell.bounds.checks.is_empty() {
            println!();
        }
        if !cell.fallback_events.is_empty() {
            println!("  {} uniform fallback states", cell.fallback_events.len());
        }
    }
    println!("mistake budgets {}", if manifest.bounds_ok { "respected" } else { "VIOLATED" });
    Ok(manifest.bounds_ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate { config, out, seed } => generate(config, out.as_deref(), *seed).map(|_| true),
        Command::Run { config, out, seed, threads } => run(config, out.as_deref(), *seed, *threads),
        Command::Report { config, out } => report(config.as_deref(), out.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("error: a mistake budget was exceeded");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(status(&e))
        }
    }
}
