//! Seeded k-means over stored behaviour vectors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{QueryError, VectorStore};
use crate::rules::{RuleId, DIMS};

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster index for every store entry, in store order.
    pub assignments: Vec<(RuleId, usize)>,
    pub centroids: Vec<[f64; DIMS]>,
    /// Sum of squared distances to assigned centroids after each iteration.
    pub objective: Vec<f64>,
    pub converged: bool,
}

impl Clustering {
    pub fn final_objective(&self) -> f64 {
        self.objective.last().copied().unwrap_or(0.0)
    }

    pub fn members(&self, cluster: usize) -> Vec<RuleId> {
        self.assignments
            .iter()
            .filter(|(_, c)| *c == cluster)
            .map(|(id, _)| *id)
            .collect()
    }
}

fn point(store: &VectorStore, i: usize) -> [f64; DIMS] {
    let raw = store.raw(i);
    std::array::from_fn(|d| raw[d] as f64)
}

fn sq(a: &[f64; DIMS], b: &[f64; DIMS]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index and squared distance of the closest centroid (lowest index on ties).
fn closest(p: &[f64; DIMS], centroids: &[[f64; DIMS]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centre) in centroids.iter().enumerate() {
        let d = sq(p, centre);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding: the first centre is uniform, each further centre is
/// drawn with probability proportional to its squared distance from the
/// nearest centre chosen so far. If every remaining point coincides with a
/// centre, the lowest-index unchosen point is taken.
fn seed_centroids(points: &[[f64; DIMS]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; DIMS]> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.gen_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first]];
    let mut dist: Vec<f64> = points.iter().map(|p| sq(p, &points[first])).collect();

    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave the target just past the final sum
            pick.unwrap_or_else(|| dist.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            (0..n).find(|&i| !chosen[i]).unwrap()
        };
        chosen[pick] = true;
        centroids.push(points[pick]);
        for (d, p) in dist.iter_mut().zip(points.iter()) {
            *d = d.min(sq(p, &points[pick]));
        }
    }
    centroids
}

/// Recomputes means; empty clusters take the point farthest from its own
/// centre (lowest index on ties), which then leaves its old cluster.
fn update(points: &[[f64; DIMS]], assign: &mut [usize], k: usize) -> Vec<[f64; DIMS]> {
    let means = |assign: &[usize]| {
        let mut sums = vec![[0.0; DIMS]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(assign.iter()) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for (s, &n) in sums.iter_mut().zip(counts.iter()) {
            if n > 0 {
                s.iter_mut().for_each(|x| *x /= n as f64);
            }
        }
        (sums, counts)
    };

    let (mut centroids, mut counts) = means(assign);
    while let Some(empty) = counts.iter().position(|&n| n == 0) {
        let far = (0..points.len())
            .filter(|&i| counts[assign[i]] > 1)
            .map(|i| (i, sq(&points[i], &centroids[assign[i]])))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            });
        let Some((i, _)) = far else { break };
        assign[i] = empty;
        (centroids, counts) = means(assign);
    }
    centroids
}

fn objective(points: &[[f64; DIMS]], assign: &[usize], centroids: &[[f64; DIMS]]) -> f64 {
    points
        .iter()
        .zip(assign.iter())
        .map(|(p, &c)| sq(p, &centroids[c]))
        .sum()
}

/// Lloyd's k-means with seeded k-means++ initialization.
///
/// Stops when an assignment step changes nothing, or after `max_iters`
/// iterations. Identical inputs and seed give identical output.
pub fn cluster(
    store: &VectorStore,
    k: usize,
    max_iters: usize,
    seed: u64,
) -> Result<Clustering, QueryError> {
    let n = store.len();
    if k == 0 || k > n {
        return Err(QueryError::InvalidK { k, max: n });
    }
    let points: Vec<[f64; DIMS]> = (0..n).map(|i| point(store, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&points, k, &mut rng);
    let mut assign: Vec<usize> = vec![usize::MAX; n];
    let mut history = Vec::new();
    let mut converged = false;

    for _ in 0..max_iters {
        let next: Vec<usize> = points
            .par_iter()
            .map(|p| closest(p, &centroids).0)
            .collect();
        if next == assign {
            converged = true;
            break;
        }
        assign = next;
        centroids = update(&points, &mut assign, k);
        history.push(objective(&points, &assign, &centroids));
    }
    if assign[0] == usize::MAX {
        // max_iters == 0: report the seeding alone
        assign = points.iter().map(|p| closest(p, &centroids).0).collect();
        history.push(objective(&points, &assign, &centroids));
    }

    Ok(Clustering {
        assignments: store.ids().iter().copied().zip(assign).collect(),
        centroids,
        objective: history,
        converged,
    })
}
