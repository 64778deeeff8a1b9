//! `ggp`: train, evaluate and run active-learning experiments with graph
//! Gaussian processes.
//!
//! Exit codes: 0 ok, 1 input error, 2 numerical failure, 3 check failure.
//! Errors are reported as JSON on stderr.

mod args;
mod commands;
mod output;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = args::Cli::parse();
    if let Err(e) = commands::run(cli.command) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
