//! Command-line driver: argument parsing, run configuration and the
//! end-to-end synthetic pipeline.

pub mod args;
pub mod commands;
pub mod config;
mod par;
pub mod repro;

use std::process::ExitCode;

use carbseg::{Error, ErrorKind};
use clap::Parser;
use serde_json::{json, Value};

use args::{Cli, Command};

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn print_summary(command: &str, body: Value) {
    let mut out = json!({ "command": command, "status": "ok" });
    if let (Value::Object(o), Value::Object(b)) = (&mut out, body) {
        o.extend(b);
    }
    println!("{out}");
}

/// Parse the process arguments, run one subcommand and print its JSON
/// summary as the last stdout line.
pub fn run() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            println!("{}", json!({ "status": "error", "exit_code": 1, "error": e.kind().to_string() }));
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    let threads = cli.threads as usize;
    let (name, result) = match cli.command {
        Command::Generate(a) => ("generate", commands::generate(a)),
        Command::Tile(a) => ("tile", commands::tile(a)),
        Command::Split(a) => ("split", commands::split(a)),
        Command::Baseline(a) => ("baseline", commands::baseline(a, threads)),
        Command::Train(a) => ("train", commands::train(a)),
        Command::Predict(a) => ("predict", commands::predict(a, threads)),
        Command::Calibrate(a) => ("calibrate", commands::calibrate(a)),
        Command::Reliability(a) => ("reliability", commands::reliability(a)),
        Command::Evaluate(a) => ("evaluate", commands::evaluate(a, threads)),
        Command::Compare(a) => ("compare", commands::compare(a)),
        Command::Quantify(a) => ("quantify", commands::quantify(a)),
        Command::Hpo(a) => ("hpo", commands::hpo(a)),
        Command::Repro(a) => ("repro", repro::run(a, threads)),
    };
    match result {
        Ok(body) => {
            print_summary(name, body);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("error: {e}");
            println!("{}", json!({ "command": name, "status": "error", "exit_code": code, "error": e.to_string() }));
            ExitCode::from(code)
        }
    }
}
