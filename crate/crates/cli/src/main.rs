//! `faf`: dataset generation, training, evaluation, ablation, prediction,
//! gradient checking and serving.
//!
//! Exit status: 0 on success, 1 on runtime errors, 2 on usage errors.

mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use config::ConfigFile;

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match &cli.command {
        Command::GenData(a) => commands::gen_data(&cfg, a)?,
        Command::Train(a) => commands::train(&cfg, a)?,
        Command::Eval(a) => commands::eval(a)?,
        Command::Ablate(a) => commands::ablate_cmd(&cfg, a)?,
        Command::Predict(a) => commands::predict(a)?,
        Command::Gradcheck(a) => return commands::gradcheck(a),
        Command::Serve(a) => commands::serve(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
