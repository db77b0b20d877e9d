//! Checkpointed computation of behaviour vectors for many rules.
//!
//! Rules are processed in ascending id order, in batches. After each batch the
//! accumulated store is written to the checkpoint file with an atomic rename,
//! so an interrupted sweep loses at most the batch in flight and a resumed
//! sweep skips every id already persisted. Vectors depend only on the rule id,
//! parameters and global seed, so the final store is byte-identical whatever
//! the worker count or interruption pattern.

use std::fmt;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::metricspace::{StoreError, VectorStore};
use crate::rules::{classify, RuleId};
use crate::sampling::{estimate_vector, SamplingError, SeedRecipe, SoupParams};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid shard {0}")]
    BadShard(String),
    #[error("checkpoint {path} is corrupt: {source}")]
    CorruptCheckpoint { path: PathBuf, source: StoreError },
    #[error("{path} was computed with different parameters or seed")]
    Mismatch { path: PathBuf },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: StoreError },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error("failed to start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

/// Shard `index` of `count`: the ids congruent to `index` modulo `count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shard {
    pub index: u32,
    pub count: u32,
}

impl Shard {
    pub const WHOLE: Shard = Shard { index: 0, count: 1 };

    pub fn new(index: u32, count: u32) -> Result<Self, SweepError> {
        if count == 0 || index >= count {
            return Err(SweepError::BadShard(format!("{index}/{count}")));
        }
        Ok(Shard { index, count })
    }

    pub fn contains(&self, id: RuleId) -> bool {
        id.value() % self.count == self.index
    }
}

impl FromStr for Shard {
    type Err = SweepError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SweepError::BadShard(s.to_string());
        let (i, n) = s.split_once('/').ok_or_else(bad)?;
        Shard::new(i.parse().map_err(|_| bad())?, n.parse().map_err(|_| bad())?)
    }
}

impl fmt::Display for Shard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.index, self.count)
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    /// Candidate ids; the shard filter is applied on top.
    pub ids: Vec<RuleId>,
    pub shard: Shard,
    pub jobs: usize,
    pub output: PathBuf,
    /// Defaults to `<output>.ckpt`.
    pub checkpoint: Option<PathBuf>,
    pub params: SoupParams,
    pub global_seed: u64,
    /// Rules computed between checkpoint flushes.
    pub batch: usize,
}

impl SweepSpec {
    pub fn new(
        ids: Vec<RuleId>,
        output: impl Into<PathBuf>,
        params: SoupParams,
        global_seed: u64,
    ) -> Self {
        SweepSpec {
            ids,
            shard: Shard::WHOLE,
            jobs: 1,
            output: output.into(),
            checkpoint: None,
            params,
            global_seed,
            batch: 64,
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| {
            let mut name = self.output.file_name().unwrap_or_default().to_os_string();
            name.push(".ckpt");
            self.output.with_file_name(name)
        })
    }

    /// Ids this sweep is responsible for, ascending and deduplicated.
    pub fn selected(&self) -> Vec<RuleId> {
        let mut ids: Vec<RuleId> = self
            .ids
            .iter()
            .copied()
            .filter(|id| self.shard.contains(*id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepProgress {
    pub done: usize,
    pub total: usize,
    /// Ids found already persisted when the sweep started.
    pub resumed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOutcome {
    Completed {
        computed: usize,
        resumed: usize,
    },
    /// Stopped by the progress callback; the checkpoint holds all finished batches.
    Interrupted {
        done: usize,
        total: usize,
    },
}

fn load_existing(path: &Path, spec: &SweepSpec) -> Result<Option<VectorStore>, SweepError> {
    if !path.exists() {
        return Ok(None);
    }
    let store = VectorStore::read_file(path).map_err(|source| SweepError::CorruptCheckpoint {
        path: path.to_path_buf(),
        source,
    })?;
    if !store.same_provenance(&VectorStore::new(spec.params, spec.global_seed)) {
        return Err(SweepError::Mismatch {
            path: path.to_path_buf(),
        });
    }
    Ok(Some(store))
}

fn write(store: &VectorStore, path: &Path) -> Result<(), SweepError> {
    store.write_file(path).map_err(|source| SweepError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Runs (or resumes) a sweep. `progress` is called after every flushed batch
/// and may return `ControlFlow::Break` to stop early.
pub fn run_sweep<F>(spec: &SweepSpec, mut progress: F) -> Result<SweepOutcome, SweepError>
where
    F: FnMut(SweepProgress) -> ControlFlow<()>,
{
    spec.params.validate()?;
    let checkpoint = spec.checkpoint_path();
    let mut store = match load_existing(&checkpoint, spec)? {
        Some(store) => store,
        None => load_existing(&spec.output, spec)?
            .unwrap_or_else(|| VectorStore::new(spec.params, spec.global_seed)),
    };

    let selected = spec.selected();
    let todo: Vec<RuleId> = selected
        .iter()
        .copied()
        .filter(|id| !store.contains(*id))
        .collect();
    let resumed = selected.len() - todo.len();
    let total = selected.len();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()?;
    let recipe = SeedRecipe::new(spec.global_seed);

    let mut done = resumed;
    for batch in todo.chunks(spec.batch.max(1)) {
        let computed = pool.install(|| {
            batch
                .par_iter()
                .map(|&id| {
                    estimate_vector(&classify(id.rule()), &spec.params, &recipe).map(|v| (id, v))
                })
                .collect::<Result<Vec<_>, _>>()
        })?;
        let fresh = VectorStore::from_records(spec.params, spec.global_seed, computed)
            .expect("estimated vectors satisfy store invariants");
        store = store.merge(&fresh).expect("batch ids are new");
        write(&store, &checkpoint)?;
        done += batch.len();
        let status = SweepProgress {
            done,
            total,
            resumed,
        };
        if progress(status).is_break() && done < total {
            return Ok(SweepOutcome::Interrupted { done, total });
        }
    }

    write(&store, &spec.output)?;
    if checkpoint.exists() && checkpoint != spec.output {
        std::fs::remove_file(&checkpoint).map_err(|e| SweepError::Write {
            path: checkpoint.clone(),
            source: e.into(),
        })?;
    }
    Ok(SweepOutcome::Completed {
        computed: todo.len(),
        resumed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(range: std::ops::Range<u32>) -> Vec<RuleId> {
        range.map(|v| RuleId::new(v).unwrap()).collect()
    }

    fn params() -> SoupParams {
        SoupParams::default().with_trials(4)
    }

    #[test]
    fn shard_parsing() {
        assert_eq!(
            "1/4".parse::<Shard>().unwrap(),
            Shard { index: 1, count: 4 }
        );
        assert!("4/4".parse::<Shard>().is_err());
        assert!("1-4".parse::<Shard>().is_err());
        assert!("0/0".parse::<Shard>().is_err());
        assert_eq!(Shard::new(2, 3).unwrap().to_string(), "2/3");
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let mut whole = SweepSpec::new(ids(0..10), dir.path().join("whole.cavs"), params(), 5);
        whole.batch = 2;
        run_sweep(&whole, |_| ControlFlow::Continue(())).unwrap();

        let mut part = whole.clone();
        part.output = dir.path().join("part.cavs");
        part.jobs = 3;
        let outcome = run_sweep(&part, |p| {
            if p.done >= 6 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert_eq!(outcome, SweepOutcome::Interrupted { done: 6, total: 10 });
        assert!(!part.output.exists());
        assert_eq!(
            VectorStore::read_file(part.checkpoint_path())
                .unwrap()
                .len(),
            6
        );

        let outcome = run_sweep(&part, |_| ControlFlow::Continue(())).unwrap();
        assert_eq!(
            outcome,
            SweepOutcome::Completed {
                computed: 4,
                resumed: 6
            }
        );
        assert!(!part.checkpoint_path().exists());
        assert_eq!(
            std::fs::read(&whole.output).unwrap(),
            std::fs::read(&part.output).unwrap()
        );
    }

    #[test]
    fn shards_merge_to_whole() {
        let dir = tempfile::tempdir().unwrap();
        let whole = SweepSpec::new(ids(0..12), dir.path().join("whole.cavs"), params(), 1);
        run_sweep(&whole, |_| ControlFlow::Continue(())).unwrap();
        let expected = VectorStore::read_file(&whole.output).unwrap();

        let mut merged = VectorStore::new(params(), 1);
        for i in 0..4 {
            let mut spec = whole.clone();
            spec.shard = Shard::new(i, 4).unwrap();
            spec.output = dir.path().join(format!("shard{i}.cavs"));
            run_sweep(&spec, |_| ControlFlow::Continue(())).unwrap();
            let shard = VectorStore::read_file(&spec.output).unwrap();
            assert!(shard.ids().iter().all(|id| id.value() % 4 == i));
            merged = merged.merge(&shard).unwrap();
        }
        assert_eq!(merged, expected);
    }

    #[test]
    fn corrupt_checkpoint_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec::new(ids(0..3), dir.path().join("out.cavs"), params(), 1);
        std::fs::write(spec.checkpoint_path(), b"CAVS garbage").unwrap();
        assert!(matches!(
            run_sweep(&spec, |_| ControlFlow::Continue(())),
            Err(SweepError::CorruptCheckpoint { .. })
        ));
    }

    #[test]
    fn mismatched_existing_store_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SweepSpec::new(ids(0..3), dir.path().join("out.cavs"), params(), 1);
        run_sweep(&spec, |_| ControlFlow::Continue(())).unwrap();
        let mut other = spec.clone();
        other.global_seed = 2;
        assert!(matches!(
            run_sweep(&other, |_| ControlFlow::Continue(())),
            Err(SweepError::Mismatch { .. })
        ));
    }

    #[test]
    fn existing_output_is_extended() {
        let dir = tempfile::tempdir().unwrap();
        let first = SweepSpec::new(ids(0..4), dir.path().join("out.cavs"), params(), 1);
        run_sweep(&first, |_| ControlFlow::Continue(())).unwrap();
        let mut second = first.clone();
        second.ids = ids(0..8);
        let outcome = run_sweep(&second, |_| ControlFlow::Continue(())).unwrap();
        assert_eq!(
            outcome,
            SweepOutcome::Completed {
                computed: 4,
                resumed: 4
            }
        );
        assert_eq!(VectorStore::read_file(&second.output).unwrap().len(), 8);
    }

    #[test]
    fn unwritable_output_fails() {
        let spec = SweepSpec::new(ids(0..1), "/nonexistent-dir/out.cavs", params(), 1);
        assert!(matches!(
            run_sweep(&spec, |_| ControlFlow::Continue(())),
            Err(SweepError::Write { .. })
        ));
    }
}
