use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use mqlab::config::Config;
use mqlab::{dispatch, Command};

#[derive(Parser)]
#[command(name = "mqlab", version, about = "Hard instances, reference optimizers and game simulations for memory-constrained convex optimization")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML config; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Sample an instance and write it in the binary container format.
    Gen,
    /// Run an optimizer on sampled or loaded instances.
    Run,
    /// Play the correlated orthogonal vector game through the reduction.
    Game,
    /// Run the property and frequency suites.
    Verify,
    /// Micro-scale encoding run.
    Encode,
    /// Queries-to-gap versus memory table.
    Frontier,
    /// Print the default config.
    Defaults,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> Result<bool> {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    }
    .resolved(cli.seed);
    let cmd = match cli.command {
        Cmd::Defaults => {
            print!("{}", toml::to_string(&cfg)?);
            return Ok(true);
        }
        Cmd::Gen => Command::Gen,
        Cmd::Run => Command::Run,
        Cmd::Game => Command::Game,
        Cmd::Verify => Command::Verify,
        Cmd::Encode => Command::Encode,
        Cmd::Frontier => Command::Frontier,
    };
    let report = dispatch(cmd, &cfg, &cli.out)?;
    print!("{}", report.render_checks());
    Ok(report.passed())
}
