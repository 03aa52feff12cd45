use std::process::ExitCode;

use clap::Parser;
use sbp_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{}", summary.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sbp: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
