//! Behaviour-space queries over a [`VectorStore`].
//!
//! Every ranking orders entries by `(distance, rule id)`, so exact ties are
//! resolved towards the smaller id and results never depend on store order
//! or thread count.

mod cluster;
mod project;
mod store;

pub use cluster::{cluster, Clustering};
pub use project::{pca2, project2d, Projection};
pub use store::{StoreError, VectorStore, HEADER_LEN, MAGIC, RECORD_LEN, VERSION};

use std::cmp::Ordering;

use rayon::prelude::*;
use thiserror::Error;

use crate::rules::{boolean_vector, classify, Rule, RuleId, DIMS};
use crate::sampling::BehaviourVector;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QueryError {
    #[error("the store is empty")]
    EmptyStore,
    #[error("rule {0} is not in the store")]
    MissingRule(Rule),
    #[error("the store needs at least {needed} entries, found {found}")]
    TooSmall { needed: usize, found: usize },
    #[error("k must be between 1 and {max}, got {k}")]
    InvalidK { k: usize, max: usize },
    #[error("dimension {0} out of range (must be < 72)")]
    BadDimension(usize),
    #[error("no members given")]
    NoMembers,
}

/// One entry of a ranked query result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbour {
    pub rule: RuleId,
    pub real_distance: f64,
    /// Boolean distance to the query rule; `None` when the query is a free vector.
    pub boolean_distance: Option<f64>,
    /// 1-based position in the ranking.
    pub rank: usize,
}

/// Euclidean distance over all 72 components.
pub fn real_distance(a: &BehaviourVector, b: &BehaviourVector) -> f64 {
    squared(&a.0, &b.0).sqrt()
}

fn squared(a: &[f64; DIMS], b: &[f64; DIMS]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn squared_to_stored(query: &[f64; DIMS], stored: &[f32]) -> f64 {
    query
        .iter()
        .zip(stored.iter())
        .map(|(&q, &s)| {
            let d = q - s as f64;
            d * d
        })
        .sum()
}

/// Distance between the 72-bit transition vectors of the two emulation plans,
/// scaled by `1/√2` so that a non-strobing rule, whose 36 bits appear twice,
/// counts each differing transition once.
pub fn boolean_distance(a: Rule, b: Rule) -> f64 {
    let diff = boolean_vector(&classify(a)).hamming(boolean_vector(&classify(b)));
    (diff as f64 / 2.0).sqrt()
}

fn by_distance(a: &(f64, RuleId), b: &(f64, RuleId)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Squared distances from `query` to every entry, optionally skipping some ids.
fn scan(store: &VectorStore, query: &BehaviourVector, skip: &[RuleId]) -> Vec<(f64, RuleId)> {
    (0..store.len())
        .into_par_iter()
        .filter(|&i| !skip.contains(&store.ids()[i]))
        .map(|i| (squared_to_stored(&query.0, store.raw(i)), store.ids()[i]))
        .collect()
}

fn ranked(mut scored: Vec<(f64, RuleId)>, k: usize, reference: Option<Rule>) -> Vec<Neighbour> {
    let k = k.min(scored.len());
    if k == 0 {
        return Vec::new();
    }
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_distance);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_distance);
    scored
        .into_iter()
        .enumerate()
        .map(|(i, (sq, rule))| Neighbour {
            rule,
            real_distance: sq.sqrt(),
            boolean_distance: reference.map(|r| boolean_distance(r, rule.rule())),
            rank: i + 1,
        })
        .collect()
}

fn lookup(store: &VectorStore, id: RuleId) -> Result<BehaviourVector, QueryError> {
    store.get(id).ok_or(QueryError::MissingRule(id.rule()))
}

fn check_k(k: usize, max: usize) -> Result<(), QueryError> {
    if k == 0 || k > max {
        Err(QueryError::InvalidK { k, max })
    } else {
        Ok(())
    }
}

/// The `k` entries closest to an arbitrary query vector.
pub fn nearest(
    store: &VectorStore,
    query: &BehaviourVector,
    k: usize,
) -> Result<Vec<Neighbour>, QueryError> {
    if store.is_empty() {
        return Err(QueryError::EmptyStore);
    }
    check_k(k, usize::MAX)?;
    Ok(ranked(scan(store, query, &[]), k, None))
}

/// The `k` entries closest to a stored rule, with Boolean distances to it.
/// The target itself is rank 1.
pub fn nearest_to_rule(
    store: &VectorStore,
    target: RuleId,
    k: usize,
) -> Result<Vec<Neighbour>, QueryError> {
    let query = lookup(store, target)?;
    check_k(k, usize::MAX)?;
    Ok(ranked(scan(store, &query, &[]), k, Some(target.rule())))
}

/// Distances of the `max_rank` nearest entries to `target`, in rank order.
pub fn rank_curve(
    store: &VectorStore,
    target: RuleId,
    max_rank: usize,
) -> Result<Vec<(usize, f64)>, QueryError> {
    Ok(nearest_to_rule(store, target, max_rank)?
        .into_iter()
        .map(|n| (n.rank, n.real_distance))
        .collect())
}

pub fn midpoint(a: &BehaviourVector, b: &BehaviourVector) -> BehaviourVector {
    BehaviourVector(std::array::from_fn(|i| (a.0[i] + b.0[i]) / 2.0))
}

/// Entries nearest the midpoint of two stored rules, excluding both of them.
pub fn hybrid(
    store: &VectorStore,
    r1: RuleId,
    r2: RuleId,
    k: usize,
) -> Result<Vec<Neighbour>, QueryError> {
    let mid = midpoint(&lookup(store, r1)?, &lookup(store, r2)?);
    check_k(k, usize::MAX)?;
    Ok(ranked(scan(store, &mid, &[r1, r2]), k, None))
}

/// The entry farthest from `target` (lowest id among equally distant entries).
pub fn opposite(store: &VectorStore, target: RuleId) -> Result<Neighbour, QueryError> {
    let query = lookup(store, target)?;
    let scored = scan(store, &query, &[]);
    let far = scored
        .iter()
        .copied()
        .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)))
        .expect("store contains the target");
    let rank = 1 + scored
        .iter()
        .filter(|s| by_distance(s, &far).is_lt())
        .count();
    Ok(Neighbour {
        rule: far.1,
        real_distance: far.0.sqrt(),
        boolean_distance: Some(boolean_distance(target.rule(), far.1.rule())),
        rank,
    })
}

/// Position of `other` in the ranking around `target`, as [`nearest_to_rule`]
/// would report it.
pub fn rank_of(store: &VectorStore, target: RuleId, other: RuleId) -> Result<usize, QueryError> {
    let query = lookup(store, target)?;
    let pos = store
        .position(other)
        .ok_or(QueryError::MissingRule(other.rule()))?;
    let probe = (squared_to_stored(&query.0, store.raw(pos)), other);
    let scored = scan(store, &query, &[]);
    Ok(1 + scored
        .iter()
        .filter(|s| by_distance(s, &probe).is_lt())
        .count())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub vector: BehaviourVector,
    /// The member closest to the mean.
    pub nearest: RuleId,
    pub distance: f64,
}

/// Component-wise mean of the members, and the member closest to it.
pub fn centroid(store: &VectorStore, members: &[RuleId]) -> Result<Centroid, QueryError> {
    if members.is_empty() {
        return Err(QueryError::NoMembers);
    }
    let vectors = members
        .iter()
        .map(|&id| lookup(store, id).map(|v| (id, v)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut mean = [0.0; DIMS];
    for (_, v) in &vectors {
        for (m, x) in mean.iter_mut().zip(v.0.iter()) {
            *m += x;
        }
    }
    let n = vectors.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    let mean = BehaviourVector(mean);
    let (sq, nearest) = vectors
        .iter()
        .map(|(id, v)| (squared(&mean.0, &v.0), *id))
        .min_by(by_distance)
        .unwrap();
    Ok(Centroid {
        vector: mean,
        nearest,
        distance: sq.sqrt(),
    })
}

/// Entries scanned per block in [`idiosyncrasy`].
pub const IDIOSYNCRASY_BLOCK: usize = 4096;

/// The `k` entries whose nearest other entry is farthest away, largest first.
///
/// Runs a full pairwise scan in blocks of [`IDIOSYNCRASY_BLOCK`] entries and
/// calls `progress(done, total)` after each block.
pub fn idiosyncrasy<F>(
    store: &VectorStore,
    k: usize,
    mut progress: F,
) -> Result<Vec<(RuleId, f64)>, QueryError>
where
    F: FnMut(usize, usize),
{
    let n = store.len();
    if n < 2 {
        return Err(QueryError::TooSmall {
            needed: 2,
            found: n,
        });
    }
    check_k(k, n)?;
    let mut nn = Vec::with_capacity(n);
    for start in (0..n).step_by(IDIOSYNCRASY_BLOCK) {
        let end = (start + IDIOSYNCRASY_BLOCK).min(n);
        let block: Vec<f64> = (start..end)
            .into_par_iter()
            .map(|i| nearest_other(store, i))
            .collect();
        nn.extend(block);
        progress(end, n);
    }
    let mut scored: Vec<(f64, RuleId)> = nn.into_iter().zip(store.ids().iter().copied()).collect();
    scored.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored
        .into_iter()
        .take(k)
        .map(|(sq, id)| (id, sq.sqrt()))
        .collect())
}

/// Squared distance from entry `i` to its nearest other entry.
fn nearest_other(store: &VectorStore, i: usize) -> f64 {
    let query = store.raw(i);
    let mut best = f64::INFINITY;
    for j in 0..store.len() {
        if j == i {
            continue;
        }
        let other = store.raw(j);
        let mut acc = 0.0;
        // abandon early once the partial sum exceeds the best so far
        for (qc, oc) in query.chunks_exact(9).zip(other.chunks_exact(9)) {
            for (&a, &b) in qc.iter().zip(oc.iter()) {
                let d = a as f64 - b as f64;
                acc += d * d;
            }
            if acc >= best {
                break;
            }
        }
        if acc < best {
            best = acc;
        }
    }
    best
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::rules::{Half, HALF_DIMS};
    use crate::sampling::{SoupParams, TransitionCounts};

    /// A valid vector for `id`: pseudo-random tallies on the allowed transitions.
    pub fn fixture_vector(id: RuleId, salt: u64) -> BehaviourVector {
        let plan = classify(id.rule());
        let bits = plan.boolean_vector();
        let mut halves = [TransitionCounts::new(), TransitionCounts::new()];
        let mut state = crate::sampling::mix64(id.value() as u64 ^ salt.rotate_left(32));
        for (h, half) in [Half::Even, Half::Odd].into_iter().enumerate() {
            if h == 1 && !plan.is_strobing() {
                halves[1] = halves[0];
                break;
            }
            for t in crate::rules::Transition::ALL {
                for n in 0..=8 {
                    if bits.get(crate::rules::dim_index(half, t, n)) {
                        state = crate::sampling::mix64(state);
                        for _ in 0..(state % 7) {
                            halves[h].record(t, n);
                        }
                    }
                }
            }
            if halves[h].total() == 0 {
                let u0 = crate::rules::dim_index(half, crate::rules::Transition::Unborn, 0);
                if bits.get(u0) {
                    halves[h].record(crate::rules::Transition::Unborn, 0);
                } else {
                    halves[h].record(crate::rules::Transition::Born, 0);
                }
            }
        }
        BehaviourVector::from_counts(&halves[0], &halves[1]).unwrap()
    }

    pub fn small_store(ids: &[u32], seed: u64) -> VectorStore {
        VectorStore::from_records(
            SoupParams::default(),
            seed,
            ids.iter().map(|&v| {
                let id = RuleId::new(v).unwrap();
                (id, fixture_vector(id, 0))
            }),
        )
        .unwrap()
    }

    /// Vector for the empty rule B/S with the given U/D masses in the first
    /// nine U slots of both halves; `weights` must sum to 1.
    pub fn unborn_vector(weights: &[f64]) -> BehaviourVector {
        let mut v = [0.0; DIMS];
        for (n, &w) in weights.iter().enumerate() {
            v[18 + n] = w;
            v[HALF_DIMS + 18 + n] = w;
        }
        BehaviourVector(v)
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::*;
    use super::*;
    use crate::sampling::SoupParams;
    use proptest::prelude::*;

    fn rule(s: &str) -> Rule {
        s.parse().unwrap()
    }

    fn id(v: u32) -> RuleId {
        RuleId::new(v).unwrap()
    }

    /// Rules B/S … whose only allowed transitions are U and D, so any
    /// distribution over U0..U8 is a valid vector for all of them.
    fn empty_born_ids(count: u32) -> Vec<RuleId> {
        // survive digits only; born empty
        (0..count).map(|k| id(k << 9)).collect()
    }

    /// Store over rules with no born or survive digits allowed except U/D,
    /// laid out so entry `i` sits at the given U-row mass distribution.
    fn unborn_store(points: &[Vec<f64>]) -> VectorStore {
        VectorStore::from_records(
            SoupParams::default(),
            0,
            empty_born_ids(points.len() as u32)
                .into_iter()
                .zip(points.iter())
                .map(|(id, w)| (id, unborn_vector(w))),
        )
        .unwrap()
    }

    #[test]
    fn real_distance_examples() {
        let a = unborn_vector(&[1.0]);
        assert_eq!(real_distance(&a, &a), 0.0);
        let mut b = a;
        b.0[18] -= 0.1;
        b.0[19] += 0.1;
        assert!((real_distance(&a, &b) - 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn boolean_distance_examples() {
        let life = rule("B3/S23");
        assert_eq!(boolean_distance(life, rule("B0123478/S01234678")), 0.0);
        assert!((boolean_distance(life, rule("B38/S238")) - 2.0).abs() < 1e-12);
        assert!((boolean_distance(life, rule("B48/S23678")) - 12f64.sqrt()).abs() < 1e-12);
        assert!(
            (boolean_distance(rule("B03/S23"), rule("B03678/S023")) - 8f64.sqrt()).abs() < 1e-12
        );
        assert_eq!(
            boolean_distance(rule("B0123478/S1234678"), life),
            boolean_distance(rule("B38/S23"), life)
        );
    }

    #[test]
    fn nearest_orders_and_breaks_ties_by_id() {
        // masses on U0/U1 put the entries at distances 0, √2·0.1·√2, ...
        let store = unborn_store(&[
            vec![0.6, 0.4],
            vec![1.0, 0.0],
            vec![0.8, 0.2],
            vec![0.8, 0.2],
        ]);
        let query = unborn_vector(&[1.0]);
        let result = nearest(&store, &query, 4).unwrap();
        let order: Vec<u32> = result.iter().map(|n| n.rule.value() >> 9).collect();
        assert_eq!(order, vec![1, 2, 3, 0]);
        assert_eq!(result[0].real_distance, 0.0);
        assert_eq!(result[1].real_distance, result[2].real_distance);
        assert_eq!(
            result.iter().map(|n| n.rank).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        assert!(result.iter().all(|n| n.boolean_distance.is_none()));
        assert_eq!(nearest(&store, &query, 2).unwrap(), result[..2].to_vec());
        assert_eq!(nearest(&store, &query, 10).unwrap().len(), 4);
    }

    #[test]
    fn nearest_errors() {
        let empty = VectorStore::new(SoupParams::default(), 0);
        let q = unborn_vector(&[1.0]);
        assert_eq!(nearest(&empty, &q, 1), Err(QueryError::EmptyStore));
        let store = small_store(&[1, 2], 0);
        assert_eq!(
            nearest(&store, &q, 0),
            Err(QueryError::InvalidK {
                k: 0,
                max: usize::MAX
            })
        );
        assert!(matches!(
            nearest_to_rule(&store, id(99), 1),
            Err(QueryError::MissingRule(_))
        ));
    }

    #[test]
    fn rank_curve_starts_at_target() {
        let ids: Vec<u32> = (6100..6200).collect();
        let store = small_store(&ids, 0);
        let curve = rank_curve(&store, Rule::life().id(), 50).unwrap();
        assert_eq!(curve.len(), 50);
        assert_eq!(curve[0], (1, 0.0));
        assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
        let near = nearest_to_rule(&store, Rule::life().id(), 1).unwrap();
        assert_eq!(near[0].rule, Rule::life().id());
        assert_eq!(near[0].boolean_distance, Some(0.0));
    }

    #[test]
    fn hybrid_excludes_parents() {
        let store = unborn_store(&[vec![1.0], vec![0.0, 1.0], vec![0.5, 0.5], vec![0.9, 0.1]]);
        let ids = store.ids().to_vec();
        let h = hybrid(&store, ids[0], ids[1], 2).unwrap();
        assert_eq!(h[0].rule, ids[2]);
        assert!(h[0].real_distance < 1e-7);
        assert_eq!(h[1].rule, ids[3]);

        let same = hybrid(&store, ids[3], ids[3], 3).unwrap();
        assert!(same.iter().all(|n| n.rule != ids[3]));
        assert_eq!(same.len(), 3);

        let mid = midpoint(&store.vector(0), &store.vector(1));
        let (e, o) = mid.half_sums();
        assert!((e + o - 2.0).abs() < 1e-6);
    }

    #[test]
    fn opposite_examples() {
        let store = small_store(&[10, 20], 0);
        let o = opposite(&store, id(10)).unwrap();
        assert_eq!(o.rule, id(20));
        assert_eq!(o.rank, 2);

        let store = unborn_store(&[
            vec![1.0],
            vec![0.0, 1.0],
            vec![0.0, 0.0, 1.0],
            vec![0.5, 0.5],
        ]);
        let ids = store.ids().to_vec();
        // entries 1 and 2 are equally far from entry 0: lower id wins
        let o = opposite(&store, ids[0]).unwrap();
        assert_eq!(o.rule, ids[1]);
        assert!((o.real_distance - 2.0).abs() < 1e-7);
    }

    #[test]
    fn rank_of_agrees_with_nearest() {
        let ids: Vec<u32> = (0..60).map(|k| k * 4099 + 3).collect();
        let store = small_store(&ids, 1);
        let target = store.ids()[7];
        for n in nearest_to_rule(&store, target, store.len()).unwrap() {
            assert_eq!(rank_of(&store, target, n.rule).unwrap(), n.rank);
        }
    }

    #[test]
    fn centroid_examples() {
        let store = unborn_store(&[vec![1.0], vec![0.0, 1.0]]);
        let ids = store.ids().to_vec();
        let single = centroid(&store, &ids[1..]).unwrap();
        assert_eq!(single.vector, store.vector(1));
        assert_eq!(single.nearest, ids[1]);

        let both = centroid(&store, &ids).unwrap();
        assert_eq!(both.vector, unborn_vector(&[0.5, 0.5]));
        assert_eq!(both.nearest, ids[0], "tie goes to the lower id");
        let (e, o) = both.vector.half_sums();
        assert!((e - 1.0).abs() < 1e-9 && (o - 1.0).abs() < 1e-9);

        assert_eq!(centroid(&store, &[]), Err(QueryError::NoMembers));
        assert!(matches!(
            centroid(&store, &[id(5)]),
            Err(QueryError::MissingRule(_))
        ));
    }

    #[test]
    fn idiosyncrasy_examples() {
        // three points along the U0/U1 edge at 0, 0.1 and 1.0
        let store = unborn_store(&[vec![1.0, 0.0], vec![0.9, 0.1], vec![0.0, 1.0]]);
        let ids = store.ids().to_vec();
        let mut calls = Vec::new();
        let top = idiosyncrasy(&store, 3, |done, total| calls.push((done, total))).unwrap();
        assert_eq!(top[0].0, ids[2]);
        assert!((top[0].1 - (2.0f64 * 2.0 * 0.81).sqrt()).abs() < 1e-6);
        assert_eq!(calls, vec![(3, 3)]);

        let dupes = unborn_store(&[vec![1.0], vec![1.0], vec![0.0, 1.0]]);
        let top = idiosyncrasy(&dupes, 1, |_, _| {}).unwrap();
        assert_eq!(top[0].0, dupes.ids()[2]);
        let all = idiosyncrasy(&dupes, 3, |_, _| {}).unwrap();
        assert_eq!(all[1].1, 0.0);
        assert_eq!(all[2].1, 0.0);

        let one = small_store(&[1], 0);
        assert_eq!(
            idiosyncrasy(&one, 1, |_, _| {}),
            Err(QueryError::TooSmall {
                needed: 2,
                found: 1
            })
        );
    }

    #[test]
    fn nearest_independent_of_thread_count() {
        let ids: Vec<u32> = (0..3000).map(|k| k * 83).collect();
        let store = small_store(&ids, 0);
        let target = store.ids()[1234];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| nearest_to_rule(&store, target, 25).unwrap())
        };
        assert_eq!(run(1), run(6));
    }

    fn arb_vector() -> impl Strategy<Value = BehaviourVector> {
        prop::collection::vec(0.0f64..1.0, 9).prop_map(|w| {
            let total: f64 = w.iter().sum::<f64>() + 1e-9;
            let w: Vec<f64> = w.iter().map(|x| x / total).collect();
            unborn_vector(&w)
        })
    }

    proptest! {
        #[test]
        fn metric_axioms(a in arb_vector(), b in arb_vector(), c in arb_vector()) {
            let ab = real_distance(&a, &b);
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, real_distance(&b, &a));
            prop_assert_eq!(real_distance(&a, &a), 0.0);
            prop_assert_eq!(ab == 0.0, a == b);
            prop_assert!(real_distance(&a, &c) <= ab + real_distance(&b, &c) + 1e-12);
        }

        #[test]
        fn nearest_is_store_order_invariant(order in Just((0u32..200).collect::<Vec<_>>()).prop_shuffle()) {
            let sorted = small_store(&(0..200).collect::<Vec<_>>(), 0);
            let shuffled = VectorStore::from_records(
                SoupParams::default(),
                0,
                order.iter().map(|&v| (id(v), sorted.get(id(v)).unwrap())),
            ).unwrap();
            let q = sorted.vector(17);
            prop_assert_eq!(nearest(&sorted, &q, 30).unwrap(), nearest(&shuffled, &q, 30).unwrap());
        }
    }
}
