use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wgflow_cli::config::KEYS;
use wgflow_cli::{run_experiment, run_sweep, Interrupted, RunConfig};

/// Particle Wasserstein-gradient-flow experiments.
#[derive(Parser)]
#[command(name = "wgflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    /// `key = value` file; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Run up to N seeds at once, each into its own file, merged at the end.
    #[arg(long, default_value_t = 1)]
    parallel_seeds: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a toy target with the particle flow or Langevin dynamics.
    Sample(RunArgs),
    /// Bayesian neural-network regression with posterior particles.
    Regress(RunArgs),
    /// Policy-parameter particles (IP-WGF; SVPG with w2_scale=0).
    RlIndirect(RunArgs),
    /// Action-particle policies (DP-WGF, DP-WGF-V).
    RlDirect(RunArgs),
    /// Repeat an experiment over the values of one key.
    Sweep(RunArgs),
    /// List every configuration key with its default.
    Keys,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let (name, args) = match cli.command {
        Command::Keys => {
            let mut out = std::io::stdout().lock();
            for k in KEYS {
                // A closed pipe (`wgflow keys | head`) is not an error.
                if writeln!(out, "{} = {}    # {}", k.key, k.default, k.doc).is_err() {
                    break;
                }
            }
            return Ok(());
        }
        Command::Sample(a) => ("sample", a),
        Command::Regress(a) => ("regress", a),
        Command::RlIndirect(a) => ("rl-indirect", a),
        Command::RlDirect(a) => ("rl-direct", a),
        Command::Sweep(a) => ("sweep", a),
    };
    let cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    if name == "sweep" {
        let results = run_sweep(&cfg, &args.out, args.parallel_seeds)?;
        let failed: Vec<&str> = results
            .iter()
            .filter(|(_, r)| r.is_err())
            .map(|(n, _)| n.as_str())
            .collect();
        anyhow::ensure!(
            failed.len() < results.len(),
            "every sweep point failed: {}",
            failed.join(", ")
        );
        return Ok(());
    }
    let summary = run_experiment(name, &cfg, &args.out, args.parallel_seeds)?;
    for s in &summary.seeds {
        match &s.error {
            Some(e) => eprintln!("seed {}: error: {e}", s.seed),
            None => eprintln!("seed {}: ok in {:.1}s", s.seed, s.wall_time_s),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<Interrupted>() => {
            eprintln!("{e}");
            ExitCode::from(130)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
