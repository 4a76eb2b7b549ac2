use std::process::ExitCode;

use clap::Parser;
use vrte_cli::{exit_code, report_timings, run, RunConfig};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let config = RunConfig::parse();
    match run(&config) {
        Ok(summary) => {
            let _ = report_timings(&summary.timings, &mut std::io::stderr());
            for f in &summary.files {
                log::info!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
