mod args;
mod commands;

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::Serialize;

use args::{Cli, Command};

/// Bad flag combination or missing input; exits with status 2 like clap's own errors.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(Usage(msg.into()).into())
}

const EXIT_IO: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        EXIT_USAGE
    } else if err.downcast_ref::<pwexp::Error>().is_some_and(|e| e.is_numeric()) {
        EXIT_NUMERIC
    } else {
        EXIT_IO
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: &'static str,
    argv: &'a [String],
    seed: Option<u64>,
    threads: Option<usize>,
    options: &'a Cli,
}

/// Records how `out` was produced. Re-running `argv` rewrites `out` byte for byte.
fn write_manifest(out: &Path, cli: &Cli, argv: &[String]) -> anyhow::Result<()> {
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cli.command.name(),
        argv,
        seed: cli.common.seed,
        threads: cli.common.threads,
        options: cli,
    };
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(())
}

fn run(cli: &Cli, argv: &[String]) -> anyhow::Result<()> {
    if let Some(k) = cli.common.threads {
        if k == 0 {
            return usage("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global()?;
    }
    let output = commands::dispatch(cli)?;
    match &cli.common.out {
        Some(path) => {
            fs::write(path, &output.body)?;
            write_manifest(path, cli, argv)?;
        }
        None => std::io::stdout().write_all(&output.body)?,
    }
    for (path, body) in &output.extra {
        fs::write(path, body)?;
        write_manifest(path, cli, argv)?;
    }
    if let Some(note) = output.summary {
        eprintln!("{note}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().skip(1).collect();
    let cli = Cli::parse();
    match run(&cli, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("pwexp {}: {err:#}", cli.command.name());
            ExitCode::from(exit_code(&err))
        }
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Cut(_) => "cut",
            Command::Km(_) => "km",
            Command::Fit(_) => "fit",
            Command::Cv(_) => "cv",
            Command::Boot(_) => "boot",
            Command::Predict(_) => "predict",
            Command::Followup(_) => "followup",
            Command::Dist(_) => "dist",
        }
    }
}
