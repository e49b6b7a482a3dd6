use std::process::ExitCode;

use clap::Parser;
use vndm_cli::commands::{run, Command};
use vndm_cli::exit_code;

/// Volumetric heart-wall motion from synthetic tagged-MRI cues.
#[derive(Debug, Parser)]
#[command(name = "tagtool", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tagtool: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
