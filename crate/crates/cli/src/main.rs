//! `driftvae` command-line experiment runner.
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime failure.
//! The output directory resolves as `--out` > `DRIFTVAE_OUT` > the config's
//! `output_dir` > `./runs`.

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use driftvae::config::ModeName;
use driftvae::runner::{run_experiment, RunArtifacts, TimingEntry};
use driftvae::ExperimentConfig;

/// Environment variable overriding the output directory.
const OUT_ENV: &str = "DRIFTVAE_OUT";

#[derive(Parser)]
#[command(name = "driftvae", version, about = "Online anomaly detection on drifting streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config file.
    Run {
        /// Path to the experiment config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of repetitions.
        #[arg(long)]
        reps: Option<usize>,
        /// Output directory for traces, summary, and timing report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the engine mode (baseline|vaepp|vaeppes|onedd|esdd).
        #[arg(long)]
        mode: Option<ModeName>,
        /// Print the measured timing report after the run.
        #[arg(long)]
        timings: bool,
    },
}

fn main() {
    std::process::exit(real_main());
}

fn real_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(
                err.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{err}");
            return 0;
        }
        Err(err) => {
            eprint!("{err}");
            return 1;
        }
    };
    match cli.command {
        Command::Run {
            config,
            seed,
            reps,
            out,
            mode,
            timings,
        } => run(config, seed, reps, out, mode, timings),
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: PathBuf,
    seed: Option<u64>,
    reps: Option<usize>,
    out: Option<PathBuf>,
    mode: Option<ModeName>,
    timings: bool,
) -> i32 {
    let mut cfg = match ExperimentConfig::load(&config) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("{err}");
            return 1;
        }
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(reps) = reps {
        cfg.repetitions = reps;
    }
    if let Some(mode) = mode {
        cfg.engine.mode = mode;
    }
    let out_dir = out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from));

    match run_experiment(&cfg, out_dir.as_deref()) {
        Ok(artifacts) => {
            report(&artifacts, timings);
            0
        }
        Err(err) => {
            eprintln!("error: {err}");
            if err.is_config_error() {
                1
            } else {
                2
            }
        }
    }
}

fn report(artifacts: &RunArtifacts, timings: bool) {
    println!(
        "wrote {} trace file(s), {}, {}",
        artifacts.trace_paths.len(),
        artifacts.summary_path.display(),
        artifacts.timing_path.display()
    );
    let stat = |name: &str| {
        artifacts
            .summary
            .whole_run
            .get(name)
            .and_then(|s| s.mean.zip(s.stderr))
    };
    for name in ["gmean", "recall", "specificity", "pauc"] {
        match stat(name) {
            Some((mean, stderr)) => println!("{name}: {mean:.4} ± {stderr:.4}"),
            None => println!("{name}: labels unavailable"),
        }
    }
    let alarms: usize = artifacts.summary.alarms_per_rep.iter().map(Vec::len).sum();
    println!("ensemble alarms across repetitions: {alarms}");
    if timings {
        print_timing("T_stream (per step)", &artifacts.timing.t_stream);
        print_timing("T_incr (per training event)", &artifacts.timing.t_incr);
        print_timing("T_drift (per reset event)", &artifacts.timing.t_drift);
    }
}

fn print_timing(label: &str, entry: &TimingEntry) {
    match entry.mean_seconds {
        Some(mean) => println!("{label}: {:.6} s over {} event(s)", mean, entry.events),
        None => println!("{label}: no events"),
    }
}
