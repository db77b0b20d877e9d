use std::path::PathBuf;

use ca_atlas::sampling::SoupParams;
use ca_atlas::sweep::Shard;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "ca-atlas",
    version,
    about = "Behaviour vectors and similarity queries for life-like cellular automata"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Vector store file.
    #[arg(long, global = true, env = "CA_ATLAS_STORE")]
    pub store: Option<PathBuf>,

    /// Global seed for all random streams.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,

    #[arg(long, global = true, default_value_t = 0.0)]
    pub density_lo: f64,

    #[arg(long, global = true, default_value_t = 1.0)]
    pub density_hi: f64,

    /// Side of the initial soup square.
    #[arg(long, global = true, default_value_t = 16)]
    pub size: u64,

    #[arg(long, global = true, default_value_t = 50)]
    pub num_steps: u64,

    /// Transitions sampled per trial (per half).
    #[arg(long, global = true, default_value_t = 50)]
    pub num_samples: u64,

    /// Soups per rule.
    #[arg(long, global = true, default_value_t = 1000)]
    pub num_trials: u64,

    /// Only process ids congruent to i modulo n.
    #[arg(long, global = true, value_name = "i/n", value_parser = parse_shard)]
    pub shard: Option<Shard>,

    /// Sweep checkpoint file (defaults to <store>.ckpt).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

impl Global {
    pub fn params(&self) -> SoupParams {
        SoupParams {
            density_lo: self.density_lo,
            density_hi: self.density_hi,
            initial_size: self.size,
            num_steps: self.num_steps,
            num_samples: self.num_samples,
            num_trials: self.num_trials,
        }
    }

    pub fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }
}

fn parse_shard(s: &str) -> Result<Shard, String> {
    s.parse()
        .map_err(|e: ca_atlas::sweep::SweepError| e.to_string())
}

fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let bad = || format!("expected two component indices like 3,11, got {s:?}");
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Table,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Estimate and print the behaviour vector of one rule.
    Vector { rule: String },

    /// Compute vectors for a range of rule ids into the store.
    Sweep {
        /// First rule id (inclusive).
        #[arg(long, default_value_t = 0)]
        from: u32,
        /// Last rule id (exclusive).
        #[arg(long, default_value_t = ca_atlas::rules::RULE_COUNT)]
        to: u32,
        /// Sweep the rules listed in this file (one per line) instead of an id range.
        #[arg(long)]
        rule_file: Option<PathBuf>,
        /// Rules computed between checkpoint flushes.
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },

    /// Nearest neighbours of a rule.
    Near {
        #[arg(long)]
        target: String,
        #[arg(short, default_value_t = 20)]
        k: usize,
    },

    /// Distance between two rules.
    Dist {
        a: String,
        b: String,
        /// Boolean distance (needs no store).
        #[arg(long)]
        boolean: bool,
    },

    /// Rank/distance curve around a rule.
    Curve {
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 200)]
        max_rank: usize,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },

    /// Rules nearest the midpoint of two rules.
    Hybrid {
        a: String,
        b: String,
        #[arg(short, default_value_t = 20)]
        k: usize,
    },

    /// The rule least similar to the target.
    Opposite { target: String },

    /// Mean vector of a group of rules and its most typical member.
    Centroid {
        #[arg(required = true)]
        members: Vec<String>,
    },

    /// Rules farthest from their nearest neighbour.
    Unique {
        #[arg(short, default_value_t = 20)]
        k: usize,
    },

    /// k-means clustering of the store.
    Cluster {
        #[arg(short)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },

    /// Two-dimensional projection of the store.
    Project {
        /// Two component indices, e.g. `3,11`.
        #[arg(long, value_name = "a,b", value_parser = parse_dims, conflicts_with = "pca")]
        dims: Option<(usize, usize)>,
        /// Project onto the top two principal components.
        #[arg(long)]
        pca: bool,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },

    /// Write the store as CSV.
    Export {
        #[arg(long, short)]
        output: Option<PathBuf>,
    },

    /// Merge shard stores into one.
    Merge {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short)]
        output: PathBuf,
    },
}
