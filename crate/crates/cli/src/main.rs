use std::process::ExitCode;

use clap::Parser;
use hostcap_cli::args::Cli;
use hostcap_cli::commands;

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HOSTCAP_LOG", "warn")).format_timestamp(None).init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
