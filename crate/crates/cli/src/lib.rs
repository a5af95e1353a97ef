//! `encode`: data generation, projection training, interest extraction,
//! scoring, serving, benchmarks and ablation sweeps.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

pub mod args;
pub mod commands;

use clap::Parser;

use args::{Cli, Command};

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(msg) => write!(f, "{msg}"),
            Failure::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<encode_core::Error>() {
            Some(encode_core::Error::Config(_)) | Some(encode_core::Error::Dim { .. }) => {
                Failure::Usage(format!("{e:#}"))
            }
            _ => Failure::Runtime(e),
        }
    }
}

impl From<encode_core::Error> for Failure {
    fn from(e: encode_core::Error) -> Self {
        Failure::from(anyhow::Error::new(e))
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

#[macro_export]
macro_rules! usage {
    ($($t:tt)*) => {
        return Err($crate::Failure::Usage(format!($($t)*)))
    };
}

fn seed(cli_seed: u64) -> Result<u64, Failure> {
    match std::env::var("ENCODE_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("ENCODE_SEED={v:?} is not an unsigned integer"))),
        Err(_) => Ok(cli_seed),
    }
}

pub fn run(cli: Cli) -> CmdResult {
    let seed = seed(cli.seed)?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(a, seed),
        Command::Ingest(a) => commands::ingest(a, seed),
        Command::TrainProj(a) => commands::train_proj(a, seed),
        Command::Extract(a) => commands::extract(a, seed),
        Command::TrainHead(a) => commands::train_head(a, seed),
        Command::Score(a) => commands::score(a),
        Command::Serve(a) => commands::serve(a),
        Command::Bench(a) => commands::bench(a, seed),
        Command::Evaluate(a) => commands::evaluate(a, seed),
        Command::Ablate(a) => commands::ablate(a, seed),
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn run_from<I, T>(argv: I) -> CmdResult
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| Failure::Usage(e.to_string()))?;
    run(cli)
}
