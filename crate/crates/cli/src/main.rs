mod commands;
mod manifest;
mod opts;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use clap::Parser;

use crate::opts::{Cli, Settings};

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Validation(_) => 3,
            Failure::Runtime(_) => 4,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::Runtime(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Validation(m) | Failure::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<poolfund::Error> for Failure {
    fn from(e: poolfund::Error) -> Self {
        use poolfund::Error::*;
        let msg = e.to_string();
        match e {
            InvalidModel(_) | Parse { .. } | Validation(_) | Domain(_) | Artifact(_) => {
                Failure::Validation(msg)
            }
            PolicyUndefined { .. } | Resource { .. } | Io(_) => Failure::Runtime(msg),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let settings = Settings::resolve(cli.command, &cli.flags)?;
    if let Some(n) = settings.get("threads") {
        let n: usize = n
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Failure::Usage(format!("invalid value `{n}` for --threads")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let table = commands::run(cli.command, &settings)?;
    let mut out = std::io::stdout().lock();
    out.write_all(table.to_csv().as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Failure::Runtime(format!("stdout: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
