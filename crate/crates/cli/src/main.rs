//! `switchvae` command-line driver.
//!
//! Failures print exactly one line to stderr, `error: <kind>: <message>`, and
//! exit with 2 for invalid input or 1 when the work itself failed.

mod cli;
mod commands;
mod config;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};
use switchvae::data::DataError;
use switchvae::eval::EvalError;
use switchvae::latentlab::LatentError;
use switchvae::model::ModelError;
use switchvae::trainer::TrainError;

use cli::{Cli, Command, LatentCommand};
use commands::UsageError;

/// Keys of the run settings file that only say where the outputs went.
const NOT_SETTINGS: [&str; 3] = ["out", "out-root", "run-id"];

fn run(argv: Vec<OsString>) -> Result<(), Failure> {
    let cmd = Cli::command();
    let argv = config::merge(&cmd, argv).map_err(|e| Failure::new("config", &e))?;
    let matches = match cmd.clone().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return Ok(());
        }
        Err(e) => return Err(Failure::clap(&e)),
    };
    let parsed = Cli::from_arg_matches(&matches).map_err(|e| Failure::clap(&e))?;
    let result = match &parsed.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a, &config::render(&cmd, &matches, &NOT_SETTINGS)),
        Command::EvalRecon(a) => commands::eval_recon(a),
        Command::EvalClassify(a) => commands::eval_classify(a),
        Command::Latent(LatentCommand::Interpolate(a)) => commands::latent_interpolate(a),
        Command::Latent(LatentCommand::Arithmetic(a)) => commands::latent_arithmetic(a),
        Command::Latent(LatentCommand::Traverse(a)) => commands::latent_traverse(a),
    };
    result.map_err(|e| Failure::new(kind(&e), &e))
}

fn kind(e: &anyhow::Error) -> &'static str {
    if e.is::<UsageError>() {
        "usage"
    } else if e.is::<DataError>() {
        "data"
    } else if e.is::<ModelError>() {
        "model"
    } else if e.is::<TrainError>() {
        "train"
    } else if e.is::<EvalError>() {
        "eval"
    } else if e.is::<LatentError>() {
        "latent"
    } else if e.chain().any(|c| c.is::<std::io::Error>()) {
        "io"
    } else {
        "runtime"
    }
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, e: &anyhow::Error) -> Self {
        let mut message = String::new();
        for cause in e.chain().map(|c| c.to_string()) {
            if message.is_empty() {
                message = cause;
            } else if !message.contains(&cause) {
                message = format!("{message}: {cause}");
            }
        }
        Self { kind, message }
    }

    fn clap(e: &clap::Error) -> Self {
        let text = e.render().to_string();
        let first = text
            .lines()
            .find(|l| !l.trim().is_empty())
            .unwrap_or("invalid arguments");
        Self {
            kind: "usage",
            message: first.trim_start_matches("error:").trim().to_string(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self.kind {
            "usage" | "config" => 2,
            _ => 1,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg: String = f.message.split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error: {}: {msg}", f.kind);
            ExitCode::from(f.exit_code())
        }
    }
}
