mod args;
mod commands;
mod table;

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use ca_atlas::metricspace::{QueryError, StoreError};
use ca_atlas::rules::{RuleIdOutOfRange, RuleParseError};
use ca_atlas::sampling::SamplingError;
use ca_atlas::sweep::SweepError;
use ca_atlas::Rule;
use clap::Parser;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("no store given; pass --store or set CA_ATLAS_STORE")]
    NoStore,
    #[error("cannot read store {path}: {source}")]
    Store { path: PathBuf, source: StoreError },
    #[error("invalid rule {text:?}: {source}")]
    Rule {
        text: String,
        source: RuleParseError,
    },
    #[error("invalid rule {text:?}: {source}")]
    RuleId {
        text: String,
        source: RuleIdOutOfRange,
    },
    #[error("rule {0} is not in the store")]
    NotInStore(Rule),
    #[error(transparent)]
    Sweep(#[from] SweepError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: StoreError },
    #[error(transparent)]
    Query(QueryError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

impl From<QueryError> for CliError {
    fn from(e: QueryError) -> Self {
        match e {
            QueryError::MissingRule(rule) => CliError::NotInStore(rule),
            other => CliError::Query(other),
        }
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::NoStore | CliError::Store { .. } => 3,
            CliError::Rule { .. } | CliError::RuleId { .. } => 4,
            CliError::NotInStore(_) => 5,
            CliError::Sweep(_) | CliError::Io(_) | CliError::Write { .. } => 6,
            CliError::Query(_) | CliError::Sampling(_) => 1,
        }
    }
}

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs())
        .build_global()
    {
        eprintln!("ca-atlas: failed to start worker pool: {e}");
        return ExitCode::from(1);
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ca-atlas: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
