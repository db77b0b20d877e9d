//! Sorted collections of behaviour vectors and their binary file format.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CAVS" | version u8 = 1 | reserved u8 = 0 | dims u16 = 72 | float width u8 = 4
//! record count u32 | global seed u64
//! density lo f64 | density hi f64 | initial_size u64 | num_steps u64 | num_samples u64 | num_trials u64
//! records: rule id u32, then 72 f32 components (even half, odd half)
//! ```

use std::fs;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::rules::{classify, dim_labels, RuleId, DIMS};
use crate::sampling::{BehaviourVector, SoupParams};

pub const MAGIC: &[u8; 4] = b"CAVS";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 4 + 1 + 1 + 2 + 1 + 4 + 8 + 6 * 8;
pub const RECORD_LEN: usize = 4 + 4 * DIMS;

/// Half sums of stored vectors may drift from 1 by single-precision rounding.
pub const STORED_SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("not a vector store (bad magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported store version {0}")]
    UnsupportedVersion(u8),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("truncated store: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected trailing bytes after the last record")]
    TrailingData(usize),
    #[error("rule id {0} out of range")]
    BadRuleId(u32),
    #[error("rule id {0} is not in ascending order")]
    Unsorted(RuleId),
    #[error("rule id {0} appears more than once")]
    DuplicateId(RuleId),
    #[error("stores overlap at rule id {0}")]
    OverlappingId(RuleId),
    #[error("stores were computed with different parameters or seeds")]
    ParamMismatch,
    #[error("vector for rule id {id} is invalid: {reason}")]
    InvalidVector { id: RuleId, reason: String },
}

/// Behaviour vectors for a set of rules, sorted strictly by rule id.
///
/// Components are held in single precision, exactly as they are written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    params: SoupParams,
    global_seed: u64,
    ids: Vec<RuleId>,
    data: Vec<f32>,
}

impl VectorStore {
    pub fn new(params: SoupParams, global_seed: u64) -> Self {
        VectorStore {
            params,
            global_seed,
            ids: Vec::new(),
            data: Vec::new(),
        }
    }

    pub fn from_records<I>(
        params: SoupParams,
        global_seed: u64,
        records: I,
    ) -> Result<Self, StoreError>
    where
        I: IntoIterator<Item = (RuleId, BehaviourVector)>,
    {
        let mut records: Vec<_> = records.into_iter().collect();
        records.sort_by_key(|(id, _)| *id);
        let mut store = VectorStore::new(params, global_seed);
        for (id, vector) in records {
            store.push(id, &vector)?;
        }
        Ok(store)
    }

    pub fn params(&self) -> &SoupParams {
        &self.params
    }

    pub fn global_seed(&self) -> u64 {
        self.global_seed
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[RuleId] {
        &self.ids
    }

    pub fn position(&self, id: RuleId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    pub fn contains(&self, id: RuleId) -> bool {
        self.position(id).is_some()
    }

    pub fn raw(&self, index: usize) -> &[f32] {
        &self.data[index * DIMS..(index + 1) * DIMS]
    }

    pub fn vector(&self, index: usize) -> BehaviourVector {
        let raw = self.raw(index);
        BehaviourVector(std::array::from_fn(|i| raw[i] as f64))
    }

    pub fn get(&self, id: RuleId) -> Option<BehaviourVector> {
        self.position(id).map(|i| self.vector(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (RuleId, BehaviourVector)> + '_ {
        (0..self.len()).map(|i| (self.ids[i], self.vector(i)))
    }

    /// Appends a record whose id exceeds every id already stored.
    pub fn push(&mut self, id: RuleId, vector: &BehaviourVector) -> Result<(), StoreError> {
        if let Some(&last) = self.ids.last() {
            if id == last {
                return Err(StoreError::DuplicateId(id));
            }
            if id < last {
                return Err(StoreError::Unsorted(id));
            }
        }
        let single: Vec<f32> = vector.0.iter().map(|&x| x as f32).collect();
        check_stored(id, &single)?;
        self.ids.push(id);
        self.data.extend_from_slice(&single);
        Ok(())
    }

    /// Inserts a record anywhere, keeping ids sorted.
    pub fn insert(&mut self, id: RuleId, vector: &BehaviourVector) -> Result<(), StoreError> {
        let at = match self.ids.binary_search(&id) {
            Ok(_) => return Err(StoreError::DuplicateId(id)),
            Err(at) => at,
        };
        let single: Vec<f32> = vector.0.iter().map(|&x| x as f32).collect();
        check_stored(id, &single)?;
        self.ids.insert(at, id);
        self.data.splice(at * DIMS..at * DIMS, single);
        Ok(())
    }

    /// True when both stores were computed with the same parameters and seed.
    pub fn same_provenance(&self, other: &VectorStore) -> bool {
        self.global_seed == other.global_seed
            && params_bits(&self.params) == params_bits(&other.params)
    }

    /// Sorted union of two stores with identical provenance and disjoint ids.
    pub fn merge(&self, other: &VectorStore) -> Result<VectorStore, StoreError> {
        if !self.same_provenance(other) {
            return Err(StoreError::ParamMismatch);
        }
        let mut out = VectorStore::new(self.params, self.global_seed);
        out.ids.reserve(self.len() + other.len());
        out.data.reserve(self.data.len() + other.data.len());
        let (mut i, mut j) = (0, 0);
        while i < self.len() || j < other.len() {
            let take_left = match (self.ids.get(i), other.ids.get(j)) {
                (Some(a), Some(b)) if a == b => return Err(StoreError::OverlappingId(*a)),
                (Some(a), Some(b)) => a < b,
                (Some(_), None) => true,
                _ => false,
            };
            let (src, k) = if take_left {
                i += 1;
                (self, i - 1)
            } else {
                j += 1;
                (other, j - 1)
            };
            out.ids.push(src.ids[k]);
            out.data.extend_from_slice(src.raw(k));
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), StoreError> {
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(MAGIC);
        header.push(VERSION);
        header.push(0);
        header.extend_from_slice(&(DIMS as u16).to_le_bytes());
        header.push(4);
        let count = u32::try_from(self.len()).expect("at most 2^18 records");
        header.extend_from_slice(&count.to_le_bytes());
        header.extend_from_slice(&self.global_seed.to_le_bytes());
        for field in params_bits(&self.params) {
            header.extend_from_slice(&field.to_le_bytes());
        }
        debug_assert_eq!(header.len(), HEADER_LEN);
        w.write_all(&header)?;

        let mut record = Vec::with_capacity(RECORD_LEN);
        for (k, id) in self.ids.iter().enumerate() {
            record.clear();
            record.extend_from_slice(&id.value().to_le_bytes());
            for x in self.raw(k) {
                record.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * RECORD_LEN);
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<VectorStore, StoreError> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        VectorStore::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<VectorStore, StoreError> {
        if bytes.len() < HEADER_LEN {
            if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                return Err(StoreError::BadMagic(bytes[..4].try_into().unwrap()));
            }
            return Err(StoreError::Truncated {
                expected: HEADER_LEN,
                found: bytes.len(),
            });
        }
        let mut cur = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4).try_into().unwrap();
        if &magic != MAGIC {
            return Err(StoreError::BadMagic(magic));
        }
        let version = cur.u8();
        if version != VERSION {
            return Err(StoreError::UnsupportedVersion(version));
        }
        if cur.u8() != 0 {
            return Err(StoreError::BadHeader("reserved byte is not zero".into()));
        }
        let dims = cur.u16();
        if dims as usize != DIMS {
            return Err(StoreError::BadHeader(format!(
                "{dims} dimensions, expected {DIMS}"
            )));
        }
        let width = cur.u8();
        if width != 4 {
            return Err(StoreError::BadHeader(format!(
                "float width {width}, expected 4"
            )));
        }
        let count = cur.u32() as usize;
        let global_seed = cur.u64();
        let params = SoupParams {
            density_lo: f64::from_bits(cur.u64()),
            density_hi: f64::from_bits(cur.u64()),
            initial_size: cur.u64(),
            num_steps: cur.u64(),
            num_samples: cur.u64(),
            num_trials: cur.u64(),
        };
        params
            .validate()
            .map_err(|e| StoreError::BadHeader(e.to_string()))?;

        let expected = HEADER_LEN + count * RECORD_LEN;
        if bytes.len() < expected {
            return Err(StoreError::Truncated {
                expected,
                found: bytes.len(),
            });
        }
        if bytes.len() > expected {
            return Err(StoreError::TrailingData(bytes.len() - expected));
        }

        let mut store = VectorStore::new(params, global_seed);
        store.ids.reserve(count);
        store.data.reserve(count * DIMS);
        for _ in 0..count {
            let raw_id = cur.u32();
            let id = RuleId::new(raw_id).map_err(|_| StoreError::BadRuleId(raw_id))?;
            if let Some(&last) = store.ids.last() {
                if id == last {
                    return Err(StoreError::DuplicateId(id));
                }
                if id < last {
                    return Err(StoreError::Unsorted(id));
                }
            }
            let start = store.data.len();
            for _ in 0..DIMS {
                store.data.push(f32::from_bits(cur.u32()));
            }
            check_stored(id, &store.data[start..])?;
            store.ids.push(id);
        }
        Ok(store)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<VectorStore, StoreError> {
        let file = fs::File::open(path)?;
        VectorStore::read_from(BufReader::new(file))
    }

    /// Writes to a sibling temporary file, then renames it over `path`, so
    /// readers never observe a partially written store.
    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), StoreError> {
        let path = path.as_ref();
        let tmp = temp_sibling(path);
        {
            let file = fs::File::create(&tmp)?;
            let mut w = BufWriter::new(file);
            self.write_to(&mut w)?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// `rule,<labels>` header, then one row per record with 6 decimals.
    pub fn export_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "rule,{}", dim_labels().join(","))?;
        for (k, id) in self.ids.iter().enumerate() {
            write!(w, "{}", id.rule())?;
            for x in self.raw(k) {
                write!(w, ",{:.6}", x)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

fn params_bits(p: &SoupParams) -> [u64; 6] {
    [
        p.density_lo.to_bits(),
        p.density_hi.to_bits(),
        p.initial_size,
        p.num_steps,
        p.num_samples,
        p.num_trials,
    ]
}

fn check_stored(id: RuleId, single: &[f32]) -> Result<(), StoreError> {
    let vector = BehaviourVector(std::array::from_fn(|i| single[i] as f64));
    vector
        .check_invariants(&classify(id.rule()), STORED_SUM_TOLERANCE)
        .map_err(|reason| StoreError::InvalidVector { id, reason })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        out
    }

    fn u8(&mut self) -> u8 {
        self.take(1)[0]
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take(2).try_into().unwrap())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }
}
