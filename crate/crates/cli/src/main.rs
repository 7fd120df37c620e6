//! Batch front end: one experiment per invocation, CSV files out.
//!
//! Exit codes: 0 success, 1 a verification check failed, 2 the config
//! violates an invariant, 3 a solver failed (see `diagnostic.txt`).

mod checks;
mod commands;
mod config;
mod output;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use stacknash::problem::Problem;

use output::{CsvFile, Meta, Summary};

#[derive(Parser)]
#[command(
    name = "stacknash",
    version,
    about = "Stackelberg-Nash null control on a scenario tree"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config; keys not given take their defaults.
    #[arg(long, global = true, default_value = "configs/default.toml")]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `section.key=value`, repeatable. Values are TOML; bare words are strings.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Simulate the state under the `[forward]` leaders.
    Forward,
    /// Nash equilibrium for seeded random leaders, with a stationarity check.
    Nash,
    /// Observability ratios over Gaussian terminal data.
    Observability,
    /// Leader controls by minimizing the penalized dual functional.
    Control,
    /// Run the invariant suite and report each residual against its tolerance.
    Verify,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Nash => "nash",
            Command::Observability => "observability",
            Command::Control => "control",
            Command::Verify => "verify",
        }
    }
}

/// The configuration breaks a modelling or numerical invariant.
#[derive(Debug)]
pub struct Violation(pub String);

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for Violation {}

/// Named checks that exceeded their tolerance.
#[derive(Debug)]
pub struct CheckFailed(pub Vec<String>);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "checks failed: {}", self.0.join("; "))
    }
}

impl std::error::Error for CheckFailed {}

fn is_violation(e: &anyhow::Error) -> bool {
    use stacknash::Error as E;
    if e.downcast_ref::<Violation>().is_some() {
        return true;
    }
    matches!(
        e.downcast_ref::<E>(),
        Some(E::Config(_) | E::Construction(_) | E::Contract(_) | E::Resource(_))
    )
}

fn verify(p: &Problem, dir: &Path, seed: u64, summary: &mut Summary) -> Result<()> {
    let all = checks::run(p, seed)?;
    let mut f = CsvFile::create(dir, "checks.csv", &["check", "value", "tolerance", "pass"])?;
    for c in &all {
        f.row(&[c.name.into(), c.value.into(), c.tolerance.into(), c.passed().into()])?;
    }
    f.finish()?;
    let failed: Vec<String> = all
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} = {:e} > {:e}", c.name, c.value, c.tolerance))
        .collect();
    summary.put("checks", all.len()).put("failed", failed.len());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CheckFailed(failed).into())
    }
}

fn run(cli: &Cli, seed: u64, p: &Problem, summary: &mut Summary) -> Result<()> {
    let dir = cli.out.as_path();
    match cli.command {
        Command::Forward => commands::forward(p, dir, summary),
        Command::Nash => commands::nash(p, dir, seed, summary),
        Command::Observability => commands::observability(p, dir, seed, summary),
        Command::Control => commands::control(p, dir, summary),
        Command::Verify => verify(p, dir, seed, summary),
    }
}

fn write_diagnostic(dir: &Path, cmd: &str, hash: &str, seed: u64, err: &anyhow::Error) {
    let mut text = format!("subcommand = {cmd}\nconfig_sha256 = {hash}\nseed = {seed}\nerror = {err:#}\n");
    if let Some(stacknash::Error::Diverged { history }) = err.downcast_ref::<stacknash::Error>() {
        text.push_str("picard_history =");
        for h in history {
            text.push_str(&format!(" {h:e}"));
        }
        text.push('\n');
    }
    if let Err(e) = std::fs::write(dir.join("diagnostic.txt"), text) {
        eprintln!("could not write diagnostic file: {e}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = cli.command.name();

    let loaded = match config::load(&cli.config, &cli.overrides, cli.seed) {
        Ok(l) => l,
        Err(e) if is_violation(&e) => {
            eprintln!("error: invariant violated: {e:#}");
            return ExitCode::from(2);
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let seed = loaded.config.run.seed;
    let problem = match Problem::from_config(&loaded.config) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: invariant violated: {e}");
            return ExitCode::from(2);
        }
    };
    let prepared = std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating {}", cli.out.display()))
        .and_then(|_| {
            output::write_meta(
                &cli.out,
                &Meta {
                    subcommand: cmd,
                    config_hash: &loaded.hash,
                    seed,
                },
            )
        });
    if let Err(e) = prepared {
        eprintln!("error: {e:#}");
        return ExitCode::from(3);
    }

    let mut summary = Summary::default();
    summary.put("subcommand", cmd).put("seed", seed);
    let outcome = run(&cli, seed, &problem, &mut summary);
    let written = summary.write(&cli.out);
    match (outcome, written) {
        (Ok(()), Ok(())) => ExitCode::SUCCESS,
        (Err(e), _) if e.downcast_ref::<CheckFailed>().is_some() => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        (Err(e), _) if is_violation(&e) => {
            eprintln!("error: invariant violated: {e:#}");
            ExitCode::from(2)
        }
        (Err(e), _) | (Ok(()), Err(e)) => {
            eprintln!("error: {e:#}");
            write_diagnostic(&cli.out, cmd, &loaded.hash, seed, &e);
            ExitCode::from(3)
        }
    }
}
