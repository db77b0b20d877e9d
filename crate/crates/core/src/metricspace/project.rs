//! Two-dimensional views of the store.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{QueryError, VectorStore};
use crate::rules::{RuleId, DIMS};

/// Power-iteration steps per principal component.
pub const PCA_ITERATIONS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// Two raw components.
    Coordinates(usize, usize),
    /// The top two principal components of the mean-centred store.
    Pca2 { seed: u64 },
}

pub fn project2d(
    store: &VectorStore,
    mode: Projection,
) -> Result<Vec<(RuleId, f64, f64)>, QueryError> {
    match mode {
        Projection::Coordinates(a, b) => {
            for d in [a, b] {
                if d >= DIMS {
                    return Err(QueryError::BadDimension(d));
                }
            }
            Ok((0..store.len())
                .map(|i| {
                    let raw = store.raw(i);
                    (store.ids()[i], raw[a] as f64, raw[b] as f64)
                })
                .collect())
        }
        Projection::Pca2 { seed } => {
            if store.is_empty() {
                return Err(QueryError::EmptyStore);
            }
            let rows: Vec<[f64; DIMS]> = (0..store.len())
                .map(|i| {
                    let raw = store.raw(i);
                    std::array::from_fn(|d| raw[d] as f64)
                })
                .collect();
            let coords = pca2(&rows, seed);
            Ok(store
                .ids()
                .iter()
                .zip(coords)
                .map(|(&id, (x, y))| (id, x, y))
                .collect())
        }
    }
}

/// Scores of each row on the top two principal components.
///
/// Components come from power iteration with deflation on the covariance
/// matrix, started from a seeded random vector and run for a fixed
/// [`PCA_ITERATIONS`] steps. Each component's sign is chosen so that its
/// largest-magnitude loading is positive. A component whose eigenvalue is
/// negligible relative to the first is reported as all zeros.
pub fn pca2(rows: &[[f64; DIMS]], seed: u64) -> Vec<(f64, f64)> {
    let n = rows.len().max(1) as f64;
    let mut mean = [0.0; DIMS];
    for r in rows {
        for (m, x) in mean.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centred: Vec<[f64; DIMS]> = rows
        .iter()
        .map(|r| std::array::from_fn(|d| r[d] - mean[d]))
        .collect();

    let mut cov = vec![[0.0; DIMS]; DIMS];
    for r in &centred {
        for i in 0..DIMS {
            if r[i] == 0.0 {
                continue;
            }
            for j in 0..DIMS {
                cov[i][j] += r[i] * r[j];
            }
        }
    }
    cov.iter_mut().flatten().for_each(|c| *c /= n);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (first, l1) = principal(&cov, &[], &mut rng);
    let (second, l2) = principal(&cov, &[first], &mut rng);
    let scale = l1.abs().max(f64::MIN_POSITIVE);
    let first = if l1 > 0.0 { first } else { [0.0; DIMS] };
    let second = if l2 > 1e-12 * scale {
        second
    } else {
        [0.0; DIMS]
    };

    centred
        .iter()
        .map(|r| (dot(r, &first), dot(r, &second)))
        .collect()
}

fn dot(a: &[f64; DIMS], b: &[f64; DIMS]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64; DIMS]) -> f64 {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Dominant eigenvector of `cov` orthogonal to `found`, with its eigenvalue.
fn principal(
    cov: &[[f64; DIMS]],
    found: &[[f64; DIMS]],
    rng: &mut ChaCha8Rng,
) -> ([f64; DIMS], f64) {
    let orthogonalize = |v: &mut [f64; DIMS]| {
        for f in found {
            let p = dot(v, f);
            v.iter_mut().zip(f.iter()).for_each(|(x, y)| *x -= p * y);
        }
    };
    let mut v: [f64; DIMS] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
    orthogonalize(&mut v);
    normalize(&mut v);

    let mut eigenvalue = 0.0;
    for _ in 0..PCA_ITERATIONS {
        let mut next: [f64; DIMS] = std::array::from_fn(|i| dot(&cov[i], &v));
        orthogonalize(&mut next);
        eigenvalue = normalize(&mut next);
        if eigenvalue == 0.0 {
            return ([0.0; DIMS], 0.0);
        }
        v = next;
    }

    let lead = (0..DIMS)
        .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
        .unwrap();
    if v[lead] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    (v, eigenvalue)
}
