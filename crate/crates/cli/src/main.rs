use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use ehaloha_cli::args::Cli;
use ehaloha_cli::{run, RunError};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, overrides) = cli.command.split();
    let cfg = match overrides.resolve(command) {
        Ok(cfg) => cfg,
        Err(e) => return fail(RunError::Config(e)),
    };
    if overrides.dump_config {
        println!("{}", cfg.to_json());
        return ExitCode::SUCCESS;
    }
    let started = Instant::now();
    match run(&cfg) {
        Ok(outcome) => {
            let artifacts: Vec<String> = outcome
                .artifacts
                .iter()
                .map(|p| p.display().to_string())
                .collect();
            println!(
                "{} seed={} wall_s={:.3} {} artifacts={}",
                cfg.command.name(),
                cfg.seed,
                started.elapsed().as_secs_f64(),
                outcome.headline,
                artifacts.join(",")
            );
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn fail(e: RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}
