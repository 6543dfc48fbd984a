use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use refuge_cli::commands::{self, Failure};
use refuge_cli::config::RunConfig;

#[derive(Parser)]
#[command(name = "refuge", version, about = "Refuge-controlled vector-borne epidemic laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full system and write the trajectory.
    Simulate(Common),
    /// Harvest, linearized harvest and closed forms over constant refuges.
    Harvest(Common),
    /// Projected ascent on the linearized harvest.
    Optimize(Common),
    /// Harvest of high-frequency refuges against the homogenized limit.
    Homogenize(Common),
    /// Run the property suite and print a pass/fail table.
    Verify(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for fan-out commands.
    #[arg(long, env = "REFUGE_WORKERS")]
    workers: Option<usize>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code() as u8)
        }
    }
}

type Runner = fn(&RunConfig, &Path, u64) -> Result<i32, Failure>;

fn execute(command: Command) -> Result<i32, Failure> {
    let (common, run): (Common, Runner) = match command {
        Command::Simulate(c) => (c, |cfg, out, _| commands::simulate_cmd(cfg, out)),
        Command::Harvest(c) => (c, |cfg, out, _| commands::harvest_cmd(cfg, out)),
        Command::Optimize(c) => (c, commands::optimize_cmd),
        Command::Homogenize(c) => (c, |cfg, out, _| commands::homogenize_cmd(cfg, out)),
        Command::Verify(c) => (c, commands::verify_cmd),
    };
    let cfg = RunConfig::load(&common.config).map_err(Failure::Config)?;
    let seed = common.seed.unwrap_or(cfg.seed);
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))
        .map_err(Failure::Run)?;
    match common.workers {
        Some(0) => return Err(Failure::Config(anyhow::anyhow!("--workers must be >= 1"))),
        Some(n) => set_workers(n)?,
        None => {}
    }
    run(&cfg, &common.out, seed)
}

#[cfg(feature = "parallel")]
fn set_workers(n: usize) -> Result<(), Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the worker pool")
        .map_err(Failure::Run)
}

#[cfg(not(feature = "parallel"))]
fn set_workers(n: usize) -> Result<(), Failure> {
    if n > 1 {
        log::warn!("built without the `parallel` feature; running sequentially");
    }
    Ok(())
}
