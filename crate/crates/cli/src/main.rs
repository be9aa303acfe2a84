mod args;
mod calibrate;
mod evaluate;
mod io;
mod score;
mod simulate;

use std::process::ExitCode;

use clap::Parser;
use convcal::config::Config;
use convcal::Error;

use args::{Cli, Command};

const EXIT_IO: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_DOMAIN: u8 = 3;

fn engine_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) => EXIT_IO,
        Error::Csv(c) if c.is_io_error() => EXIT_IO,
        Error::Parse { .. } | Error::Schema { .. } | Error::Config(_) | Error::Csv(_) => {
            EXIT_SCHEMA
        }
        Error::Domain(_) => EXIT_DOMAIN,
        Error::Turn { source, .. } => engine_code(source),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return engine_code(e);
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
        if cause.is::<serde_json::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_DOMAIN
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        let io = c
            .downcast_ref::<std::io::Error>()
            .or_else(|| match c.downcast_ref::<Error>() {
                Some(Error::Io(e)) => Some(e),
                _ => None,
            });
        let kind = io
            .map(|e| e.kind())
            .or_else(|| c.downcast_ref::<serde_json::Error>()?.io_error_kind());
        kind == Some(std::io::ErrorKind::BrokenPipe)
    })
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("--jobs: {e}")))?;
    }
    let config = match &cli.config {
        Some(path) => Config::from_path(path)?,
        None => Config::default(),
    };
    match &cli.command {
        Command::Score(a) => score::run(a, &config, cli.strict),
        Command::Calibrate(a) => calibrate::run(a, &config, cli.strict),
        Command::Evaluate(a) => evaluate::run(a, &config, cli.strict),
        Command::Simulate(a) => simulate::run(a, &config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if is_broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("convcal: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
