use std::path::PathBuf;
use std::process::ExitCode;

use cheatlab::config::load_config;
use cheatlab::pipeline::{run_command, Command};
use cheatlab::Error;
use clap::error::ErrorKind;
use clap::Parser;

/// Desk-scale sim-to-sim transfer by encoder cheating.
#[derive(Parser, Debug)]
#[command(name = "cheatlab", version)]
struct Cli {
    /// gen-fake-data, train-vae, gen-expert, train-policy, build-pairs,
    /// train-cheat, gen-real-data, train-baseline, eval, viz, pipeline, or
    /// print-config
    command: String,
    /// Line-oriented `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

const USAGE: u8 = 1;
const DEPENDENCY: u8 = 2;
const RUNTIME: u8 = 3;

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config { .. } => USAGE,
        Error::Dependency(_) => DEPENDENCY,
        _ => RUNTIME,
    }
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let cfg = load_config(cli.config.as_deref(), &cli.set).map_err(|e| (exit_code(&e), e.to_string()))?;
    if cli.command == "print-config" {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    let command: Command = cli.command.parse().map_err(|e: String| (USAGE, e))?;
    let summaries = run_command(command, &cfg).map_err(|e| (exit_code(&e), e.to_string()))?;
    for s in summaries {
        let outputs: Vec<&str> = s.outputs.iter().map(|o| o.path.as_str()).collect();
        println!("{}: wrote {} in {}", s.stage, outputs.join(", "), cfg.out_dir.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cheatlab::config::RunConfig;

    #[test]
    fn config_errors_map_to_usage() {
        let e = RunConfig::default().apply_text("popsize = 3").unwrap_err();
        assert_eq!(exit_code(&e), USAGE);
        assert_eq!(exit_code(&Error::Dependency("x".into()).in_stage("eval")), DEPENDENCY);
        assert_eq!(exit_code(&Error::Contract("x".into())), RUNTIME);
    }
}
