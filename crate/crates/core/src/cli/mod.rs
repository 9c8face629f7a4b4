//! Command-line front end: configuration, dispatch and output files.

pub mod config;
pub mod io;
pub mod run;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{parse_config, parse_config_str, resolve_out_dir, Parsed, RunConfig};
pub use run::{run, RunOutcome};

/// Environment variable overriding the output directory.
pub const OUT_ENV: &str = "DELAY_MFG_OUT";

pub const EXIT_CHECK_FAILED: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "delay-mfg", version, about = "Delayed-control mean field game laboratory")]
pub struct Cli {
    /// TOML file of `key = value` settings.
    #[arg(short, long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one setting; repeatable, wins over the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory (beats DELAY_MFG_OUT and `out_dir`).
    #[arg(short, long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Evaluate the acceptance thresholds for this command; exit 4 on failure.
    #[arg(long, global = true)]
    pub check: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve the kernel system and write the CSV bundle.
    Solve,
    /// PDE, boundary, master-equation and Nash residual diagnostics.
    Residuals,
    /// Monte Carlo simulation of the N-player game.
    Simulate,
    /// N-player vs master-equation value gap over a sweep of N.
    Converge,
    /// Compare the kernel value with the lag-chain oracle.
    OracleCompare,
}

impl Command {
    pub const ALL: [Command; 5] = [
        Command::Solve,
        Command::Residuals,
        Command::Simulate,
        Command::Converge,
        Command::OracleCompare,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Residuals => "residuals",
            Command::Simulate => "simulate",
            Command::Converge => "converge",
            Command::OracleCompare => "oracle-compare",
        }
    }
}

/// Runs the CLI on `args` and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let parsed = match parse_config(cli.config.as_deref(), &cli.set) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code().max(2);
        }
    };
    for w in &parsed.warnings {
        eprintln!("warning: {w}");
    }
    let env = std::env::var(OUT_ENV).ok();
    let out = resolve_out_dir(cli.out.as_deref(), env.as_deref(), &parsed.config);
    match run(cli.command, &parsed, &out, cli.check) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            for c in &outcome.checks {
                println!("{}", c.line());
            }
            if outcome.all_passed() {
                0
            } else {
                EXIT_CHECK_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
