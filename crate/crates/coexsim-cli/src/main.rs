//! Command-line front end: `run` executes one experiment and writes its
//! artifacts, `report` recomputes a summary from a records file on disk, and
//! `selftest` runs the built-in verification suite.

use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use coexsim::env::Scenario;
use coexsim::experiment::{run_experiment, AgentKind, ExperimentConfig};
use coexsim::report::{report_dir, write_run_outputs};
use coexsim::selftest;

#[derive(Parser)]
#[command(
    name = "coexsim",
    version,
    about = "Wireless-coexistence simulator with DQN/DDQN channel-allocation agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (scenario × agent × repetitions) and write
    /// records.csv and summary.json.
    Run(RunArgs),
    /// Recompute summary.json from DIR/records.csv. Re-running on an
    /// untouched directory reproduces the summary byte for byte.
    Report {
        /// Directory holding records.csv.
        #[arg(long = "in", value_name = "DIR")]
        dir: PathBuf,
    },
    /// Run the built-in verification suite and report each check.
    Selftest,
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    s.parse().map_err(|e: coexsim::env::EnvError| e.to_string())
}

fn parse_agent(s: &str) -> Result<AgentKind, String> {
    s.parse()
        .map_err(|e: coexsim::experiment::ExperimentError| e.to_string())
}

#[derive(Args)]
struct RunArgs {
    /// Interferer behavior: 'static' (holds its channel each episode) or
    /// 'hopping' (advances every step).
    #[arg(long, default_value = "static", value_parser = parse_scenario)]
    scenario: Scenario,

    /// Channel-allocation policy: 'dqn', 'ddqn' or 'random'.
    #[arg(long, default_value = "ddqn", value_parser = parse_agent)]
    agent: AgentKind,

    /// Episodes per repetition. The first 100 train when running 250 or
    /// more; shorter runs train for two fifths of the episodes.
    #[arg(long, default_value_t = 250)]
    episodes: usize,

    /// Independent repetitions of the whole run.
    #[arg(long, default_value_t = 15)]
    reps: usize,

    /// Master seed; every repetition derives its own streams from it.
    #[arg(long, default_value_t = 7)]
    seed: u64,

    /// Output directory for records.csv and summary.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Training-phase length for a given episode count: the protocol's 100
/// episodes at full scale, proportionally shorter below it.
fn training_episodes_for(episodes: usize) -> usize {
    if episodes >= 250 {
        100
    } else {
        (episodes * 2 / 5).max(1)
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    if args.episodes < 2 {
        bail!("--episodes must be at least 2 (one training and one operational episode)");
    }
    let cfg = ExperimentConfig {
        scenario: args.scenario,
        agent: args.agent,
        episodes: args.episodes,
        training_episodes: training_episodes_for(args.episodes),
        repetitions: args.reps,
        master_seed: args.seed,
        ..ExperimentConfig::default()
    };
    cfg.validate().context("invalid run configuration")?;

    let t0 = Instant::now();
    let result = run_experiment(&cfg).context("experiment failed")?;
    let summary = write_run_outputs(&args.out, &result)
        .with_context(|| format!("writing artifacts under {}", args.out.display()))?;
    eprintln!(
        "{} × {} | {} repetitions × {} episodes | {:.1} s | {} and {}",
        summary.scenario,
        summary.agent,
        args.reps,
        args.episodes,
        t0.elapsed().as_secs_f64(),
        args.out.join("records.csv").display(),
        args.out.join("summary.json").display(),
    );
    print!("{}", summary.to_json()?);
    Ok(())
}

fn cmd_report(dir: &PathBuf) -> Result<()> {
    let summary = report_dir(dir)
        .with_context(|| format!("recomputing summary under {}", dir.display()))?;
    print!("{}", summary.to_json()?);
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    let t0 = Instant::now();
    let results = selftest::run_all();
    for c in &results {
        println!(
            "{} {} — {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed = results.iter().filter(|c| !c.passed).count();
    println!(
        "{} checks, {} passed, {} failed ({:.1} s)",
        results.len(),
        results.len() - failed,
        failed,
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        bail!("{failed} selftest check(s) failed");
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Report { dir } => cmd_report(&dir),
        Command::Selftest => cmd_selftest(),
    }
}
