mod args;
mod commands;
mod config;
mod error;
mod manifest;
mod problem;
mod suites;

use std::process::ExitCode;

use clap::Parser;
use lrgw::oracle_metrics::TrackingAllocator;

use crate::args::{Cli, Command, ValidateArgs};
use crate::error::{CliError, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION_FAILED};

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

fn cmd_validate(args: &ValidateArgs) -> Result<u8, CliError> {
    let checks = suites::run_suite(args.suite, args.n, args.seed)?;
    for c in &checks {
        let verdict = if c.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} {} = {:.3e} (limit {:.1e})", c.name, c.value, c.limit);
    }
    Ok(if checks.iter().all(|c| c.passed()) { EXIT_OK } else { EXIT_VALIDATION_FAILED })
}

fn run(cli: Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Gen(a) => commands::cmd_gen(a),
        Command::Solve(a) => commands::cmd_solve(a),
        Command::Bench(a) => commands::cmd_bench(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match config::expand_config(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    let _ = manifest::EXPANDED_ARGS.set(argv);
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
