#![allow(clippy::neg_cmp_op_on_partial_ord)]
mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

/// Failure categories and their exit codes.
pub enum Failure {
    /// Bad arguments, unreadable inputs, malformed files.
    Usage(String),
    /// The registration itself failed.
    Registration(String),
}

impl From<craquereg::Error> for Failure {
    fn from(e: craquereg::Error) -> Self {
        match e {
            craquereg::Error::Registration {
                stage,
                message,
                stats,
            } => {
                let stats = serde_json::to_string_pretty(&stats).unwrap_or_default();
                Failure::Registration(format!(
                    "registration failed at stage {stage}: {message}\nstage counts:\n{stats}"
                ))
            }
            other => Failure::Usage(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match cli.command {
        Command::Register(a) => commands::register(a),
        Command::Refine(a) => commands::refine(a),
        Command::Warp(a) => commands::warp(a),
        Command::Eval(a) => commands::eval(a),
        Command::Synth(a) => commands::synth(a),
        Command::Detect(a) => commands::detect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Registration(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
