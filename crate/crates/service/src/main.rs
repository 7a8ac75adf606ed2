use std::io;

use clap::Parser;
use tracing_subscriber::EnvFilter;

use triage_service::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn,triage_service=info")))
        .with_writer(io::stderr)
        .init();
    let stdin = io::stdin();
    let mut stdout = io::stdout();
    if let Err(err) = run(cli, stdin.lock(), &mut stdout) {
        let api = err.into_api();
        eprintln!("{}", serde_json::to_string(&api).expect("error body serializes"));
        std::process::exit(exit_code(&api));
    }
}
