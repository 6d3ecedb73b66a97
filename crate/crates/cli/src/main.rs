mod args;
mod commands;
mod settings;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use settings::Settings;

fn run(cli: &Cli) -> commands::Outcome {
    let mut s = Settings::load(cli.config.as_deref())?;
    let seed = s.pick("seed", cli.seed, 0u64)?;
    match &cli.command {
        Command::Extract(a) => commands::extract(&mut s, a),
        Command::Augment(a) => commands::augment(&mut s, seed, a),
        Command::SynthTask(a) => commands::synth_task(&mut s, seed, a),
        Command::Train(a) => commands::train(&mut s, seed, a),
        Command::Eval(a) => commands::eval(&mut s, a),
        Command::Gradcheck(a) => commands::gradcheck(&mut s, seed, a),
        Command::InspectGain(a) => commands::inspect_gain(&mut s, a),
        Command::Info(a) => commands::info(&mut s, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
