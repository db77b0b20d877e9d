//! Random soups, state-transition sampling, and behaviour-vector estimation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::engine::{EngineError, Grid, Rect};
use crate::rules::{
    boolean_vector, EmulationPlan, Half, Rule, RuleId, Transition, DIMS, HALF_DIMS,
};

/// The random stream type used for every trial.
pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SamplingError {
    #[error("density range [{lo}, {hi}] must satisfy 0 <= lo <= hi <= 1")]
    DensityRange { lo: f64, hi: f64 },
    #[error("{name} must be positive")]
    ZeroCount { name: &'static str },
    #[error("no transitions recorded in the {0} half")]
    EmptyTally(&'static str),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Parameters of the soup protocol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoupParams {
    pub density_lo: f64,
    pub density_hi: f64,
    /// Width and height of the initial soup square.
    pub initial_size: u64,
    /// Generations to run before sampling.
    pub num_steps: u64,
    /// Transitions sampled per trial, per half.
    pub num_samples: u64,
    pub num_trials: u64,
}

impl Default for SoupParams {
    fn default() -> Self {
        SoupParams {
            density_lo: 0.0,
            density_hi: 1.0,
            initial_size: 16,
            num_steps: 50,
            num_samples: 50,
            num_trials: 1000,
        }
    }
}

impl SoupParams {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let (lo, hi) = (self.density_lo, self.density_hi);
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(SamplingError::DensityRange { lo, hi });
        }
        for (name, value) in [
            ("initial_size", self.initial_size),
            ("num_steps", self.num_steps),
            ("num_samples", self.num_samples),
            ("num_trials", self.num_trials),
        ] {
            if value == 0 {
                return Err(SamplingError::ZeroCount { name });
            }
        }
        Ok(())
    }

    /// The square the soup is drawn in, with its top-left cell at the origin.
    pub fn soup_square(&self) -> Rect {
        let last = self.initial_size as i64 - 1;
        Rect {
            x_min: 0,
            y_min: 0,
            x_max: last,
            y_max: last,
        }
    }

    pub fn with_trials(mut self, num_trials: u64) -> Self {
        self.num_trials = num_trials;
        self
    }
}

/// Tallies of observed transitions, indexed like one half of a behaviour vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TransitionCounts {
    counts: [u64; HALF_DIMS],
}

impl Default for TransitionCounts {
    fn default() -> Self {
        TransitionCounts {
            counts: [0; HALF_DIMS],
        }
    }
}

impl TransitionCounts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, transition: Transition, neighbours: u8) {
        self.counts[transition.half_index(neighbours)] += 1;
    }

    pub fn get(&self, transition: Transition, neighbours: u8) -> u64 {
        self.counts[transition.half_index(neighbours)]
    }

    pub fn as_slice(&self) -> &[u64; HALF_DIMS] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &TransitionCounts) {
        for (a, b) in self.counts.iter_mut().zip(other.counts.iter()) {
            *a += b;
        }
    }
}

/// Estimated transition probabilities: even half then odd half, each summing to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BehaviourVector(pub [f64; DIMS]);

impl BehaviourVector {
    pub fn zeros() -> Self {
        BehaviourVector([0.0; DIMS])
    }

    pub fn from_counts(
        even: &TransitionCounts,
        odd: &TransitionCounts,
    ) -> Result<Self, SamplingError> {
        let mut v = [0.0; DIMS];
        for (half, counts, name) in [(0, even, "even"), (1, odd, "odd")] {
            let total = counts.total();
            if total == 0 {
                return Err(SamplingError::EmptyTally(name));
            }
            let total = total as f64;
            for (i, &c) in counts.as_slice().iter().enumerate() {
                v[half * HALF_DIMS + i] = c as f64 / total;
            }
        }
        Ok(BehaviourVector(v))
    }

    pub fn components(&self) -> &[f64; DIMS] {
        &self.0
    }

    pub fn half(&self, half: Half) -> &[f64] {
        let start = half as usize * HALF_DIMS;
        &self.0[start..start + HALF_DIMS]
    }

    pub fn get(&self, half: Half, transition: Transition, neighbours: u8) -> f64 {
        self.half(half)[transition.half_index(neighbours)]
    }

    pub fn half_sums(&self) -> (f64, f64) {
        (
            self.half(Half::Even).iter().sum(),
            self.half(Half::Odd).iter().sum(),
        )
    }

    /// Checks normalization, the forbidden-transition zero pattern, and (for
    /// non-strobing plans) equality of the two halves.
    pub fn check_invariants(&self, plan: &EmulationPlan, tolerance: f64) -> Result<(), String> {
        let (even, odd) = self.half_sums();
        if (even - 1.0).abs() > tolerance || (odd - 1.0).abs() > tolerance {
            return Err(format!("half sums {even} and {odd} are not 1"));
        }
        let allowed = boolean_vector(plan);
        for (i, &p) in self.0.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("component {i} = {p} outside [0, 1]"));
            }
            if p != 0.0 && !allowed.get(i) {
                return Err(format!("forbidden component {i} = {p}"));
            }
        }
        if !plan.is_strobing() && self.half(Half::Even) != self.half(Half::Odd) {
            return Err("halves differ for a non-strobing plan".into());
        }
        Ok(())
    }
}

/// Derives an independent random stream for every `(rule, trial)` pair.
///
/// The stream seed is `mix(((trial << 18) | rule) ^ mix(global_seed))`, where
/// `mix` is the SplitMix64 finalizer. The finalizer is a bijection on `u64`,
/// so distinct pairs (with `trial < 2^46`) always receive distinct seeds, and
/// the seed of one trial never depends on which other trials were run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedRecipe {
    pub global_seed: u64,
}

impl SeedRecipe {
    pub fn new(global_seed: u64) -> Self {
        SeedRecipe { global_seed }
    }

    pub fn stream_seed(&self, rule: RuleId, trial: u64) -> u64 {
        let key = (trial << 18) | rule.value() as u64;
        mix64(key ^ mix64(self.global_seed))
    }

    pub fn stream(&self, rule: RuleId, trial: u64) -> Stream {
        Stream::seed_from_u64(self.stream_seed(rule, trial))
    }
}

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws a density from the configured range, then fills the soup square.
pub fn make_soup<R: Rng + ?Sized>(rng: &mut R, params: &SoupParams) -> Grid {
    let density = if params.density_hi > params.density_lo {
        rng.gen_range(params.density_lo..params.density_hi)
    } else {
        params.density_lo
    };
    fill_soup(rng, params, density)
}

/// Fills the soup square with each cell live independently with probability `density`.
///
/// The stored region leaves room for `num_steps + 2` generations of growth
/// without reallocating.
pub fn fill_soup<R: Rng + ?Sized>(rng: &mut R, params: &SoupParams, density: f64) -> Grid {
    let square = params.soup_square();
    let mut grid = Grid::with_region(square.expand(params.num_steps as i64 + 3));
    for y in square.y_min..=square.y_max {
        for x in square.x_min..=square.x_max {
            if rng.gen::<f64>() < density {
                grid.set(x, y, true);
            }
        }
    }
    grid
}

/// Cells eligible for sampling at a given generation: the live bounding box
/// grown by one cell, or the soup square once everything has died.
pub fn sampling_region(grid: &Grid, params: &SoupParams) -> Rect {
    match grid.bounding_box() {
        Some(bbox) => bbox.expand(1),
        None => params.soup_square(),
    }
}

/// Tallies the transition `before -> after` at one cell.
pub fn record_transition(
    before: &Grid,
    after: &Grid,
    rule: Rule,
    x: i64,
    y: i64,
    counts: &mut TransitionCounts,
) -> Result<(), SamplingError> {
    let alive = before.get(x, y);
    let neighbours = before.neighbour_count(x, y)?.value();
    let next = after.get(x, y);
    debug_assert_eq!(rule.next_state(alive, neighbours), next);
    counts.record(Transition::from_states(alive, next), neighbours);
    Ok(())
}

/// Samples `n` cells uniformly, with replacement, from the sampling region of
/// `before` and tallies their transitions into `after`.
pub fn sample_transitions<R: Rng + ?Sized>(
    before: &Grid,
    after: &Grid,
    rule: Rule,
    rng: &mut R,
    n: u64,
    params: &SoupParams,
) -> Result<TransitionCounts, SamplingError> {
    debug_assert_eq!(after.generation(), before.generation() + 1);
    let region = sampling_region(before, params);
    let mut counts = TransitionCounts::new();
    let mut before = before.clone();
    // The fallback square may lie outside the stored region of a dead grid.
    before.reserve(region);
    for _ in 0..n {
        let x = rng.gen_range(region.x_min..=region.x_max);
        let y = rng.gen_range(region.y_min..=region.y_max);
        record_transition(&before, after, rule, x, y, &mut counts)?;
    }
    Ok(counts)
}

/// One soup: run `num_steps` generations, then sample the next transition
/// (and, for strobing plans, the one after it under the odd rule).
pub fn run_trial<R: Rng + ?Sized>(
    plan: &EmulationPlan,
    params: &SoupParams,
    rng: &mut R,
) -> Result<(TransitionCounts, TransitionCounts), SamplingError> {
    let mut grid = make_soup(rng, params);
    for _ in 0..params.num_steps {
        grid = grid.step(plan.rule_at(grid.generation()))?;
    }

    let rule = plan.rule_at(grid.generation());
    let next = grid.step(rule)?;
    let first = sample_transitions(&grid, &next, rule, rng, params.num_samples, params)?;
    if !plan.is_strobing() {
        return Ok((first, first));
    }

    let rule = plan.rule_at(next.generation());
    let after = next.step(rule)?;
    let second = sample_transitions(&next, &after, rule, rng, params.num_samples, params)?;
    if grid.generation().is_multiple_of(2) {
        Ok((first, second))
    } else {
        Ok((second, first))
    }
}

/// Aggregated even and odd tallies over all trials of a plan.
pub fn tally_trials(
    plan: &EmulationPlan,
    params: &SoupParams,
    recipe: &SeedRecipe,
) -> Result<(TransitionCounts, TransitionCounts), SamplingError> {
    params.validate()?;
    let id = plan.original.id();
    (0..params.num_trials)
        .into_par_iter()
        .map(|trial| run_trial(plan, params, &mut recipe.stream(id, trial)))
        .try_reduce(
            || (TransitionCounts::new(), TransitionCounts::new()),
            |mut acc, (even, odd)| {
                acc.0.merge(&even);
                acc.1.merge(&odd);
                Ok(acc)
            },
        )
}

/// Estimates the behaviour vector of a plan from `num_trials` independent soups.
///
/// Streams are keyed by the original rule's id, so rules that share a run
/// rule still get independent samples. The result does not depend on how
/// trials are scheduled across threads.
pub fn estimate_vector(
    plan: &EmulationPlan,
    params: &SoupParams,
    recipe: &SeedRecipe,
) -> Result<BehaviourVector, SamplingError> {
    let (even, odd) = tally_trials(plan, params, recipe)?;
    BehaviourVector::from_counts(&even, &odd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rules::classify;

    fn rng(seed: u64) -> Stream {
        Stream::seed_from_u64(seed)
    }

    #[test]
    fn defaults_follow_protocol() {
        let p = SoupParams::default();
        assert_eq!((p.density_lo, p.density_hi), (0.0, 1.0));
        assert_eq!(
            (p.initial_size, p.num_steps, p.num_samples, p.num_trials),
            (16, 50, 50, 1000)
        );
        assert!(p.validate().is_ok());
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SoupParams {
            density_hi: 1.5,
            ..SoupParams::default()
        };
        assert!(matches!(
            p.validate(),
            Err(SamplingError::DensityRange { .. })
        ));
        let p = SoupParams {
            num_samples: 0,
            ..SoupParams::default()
        };
        assert_eq!(
            p.validate(),
            Err(SamplingError::ZeroCount {
                name: "num_samples"
            })
        );
    }

    #[test]
    fn forced_densities() {
        let p = SoupParams::default();
        assert!(fill_soup(&mut rng(1), &p, 0.0).is_empty());
        let full = fill_soup(&mut rng(1), &p, 1.0);
        assert_eq!(full.population(), 256);
        assert_eq!(full.bounding_box(), Some(p.soup_square()));
        assert_eq!(full.generation(), 0);
    }

    #[test]
    fn mean_soup_density_is_one_half() {
        let p = SoupParams::default();
        let mut r = rng(7);
        let soups = 10_000;
        let live: u64 = (0..soups).map(|_| make_soup(&mut r, &p).population()).sum();
        let mean = live as f64 / (soups as f64 * 256.0);
        assert!((mean - 0.5).abs() < 0.02, "mean density {mean}");
    }

    #[test]
    fn empty_grid_samples_only_u0() {
        let p = SoupParams::default();
        let before = fill_soup(&mut rng(0), &p, 0.0);
        let after = before.step(Rule::life()).unwrap();
        let counts =
            sample_transitions(&before, &after, Rule::life(), &mut rng(3), 50, &p).unwrap();
        assert_eq!(counts.get(Transition::Unborn, 0), 50);
        assert_eq!(counts.total(), 50);
    }

    #[test]
    fn dead_grid_without_region_still_samples() {
        let p = SoupParams::default();
        let before = Grid::new();
        let after = before.step(Rule::life()).unwrap();
        let counts =
            sample_transitions(&before, &after, Rule::life(), &mut rng(3), 20, &p).unwrap();
        assert_eq!(counts.get(Transition::Unborn, 0), 20);
    }

    #[test]
    fn forced_cell_transitions() {
        let life = Rule::life();
        let lone = Grid::from_cells([(0, 0)]);
        let mut counts = TransitionCounts::new();
        record_transition(&lone, &lone.step(life).unwrap(), life, 0, 0, &mut counts).unwrap();
        assert_eq!(counts.get(Transition::Die, 0), 1);

        let block = Grid::from_cells([(0, 0), (1, 0), (0, 1), (1, 1)]);
        let mut counts = TransitionCounts::new();
        record_transition(&block, &block.step(life).unwrap(), life, 1, 1, &mut counts).unwrap();
        assert_eq!(counts.get(Transition::Survive, 3), 1);
    }

    #[test]
    fn sampling_region_is_bbox_plus_one() {
        let p = SoupParams::default();
        let g = Grid::from_cells([(3, 4), (5, 9)]);
        assert_eq!(
            sampling_region(&g, &p),
            Rect {
                x_min: 2,
                y_min: 3,
                x_max: 6,
                y_max: 10
            }
        );
        assert_eq!(sampling_region(&Grid::new(), &p), p.soup_square());
    }

    #[test]
    fn empty_rule_trial_sees_only_unborn() {
        let plan = classify("B/S".parse().unwrap());
        let p = SoupParams::default();
        let (even, odd) = run_trial(&plan, &p, &mut rng(11)).unwrap();
        assert_eq!(even, odd);
        assert_eq!(even.get(Transition::Unborn, 0), 50);
    }

    #[test]
    fn strobing_trials_respect_both_rules() {
        let plan = classify("B03/S23".parse().unwrap());
        let bits = plan.boolean_vector();
        let p = SoupParams::default();
        for seed in 0..20 {
            let (even, odd) = run_trial(&plan, &p, &mut rng(seed)).unwrap();
            assert_eq!(even.total(), 50);
            assert_eq!(odd.total(), 50);
            for i in 0..HALF_DIMS {
                if !bits.get(i) {
                    assert_eq!(even.as_slice()[i], 0, "even {i}");
                }
                if !bits.get(HALF_DIMS + i) {
                    assert_eq!(odd.as_slice()[i], 0, "odd {i}");
                }
            }
        }
    }

    #[test]
    fn stream_seeds_are_distinct_and_stable() {
        let recipe = SeedRecipe::new(42);
        let mut seen = std::collections::HashSet::new();
        for rule in 0..64 {
            for trial in 0..64 {
                assert!(seen.insert(recipe.stream_seed(RuleId::new(rule).unwrap(), trial)));
            }
        }
        let id = Rule::life().id();
        assert_eq!(
            recipe.stream_seed(id, 5),
            SeedRecipe::new(42).stream_seed(id, 5)
        );
        assert_ne!(
            recipe.stream_seed(id, 5),
            SeedRecipe::new(43).stream_seed(id, 5)
        );
    }

    #[test]
    fn estimate_is_deterministic_and_normalized() {
        let p = SoupParams::default().with_trials(40);
        for text in ["B3/S23", "B0123478/S01234678", "B03/S23"] {
            let plan = classify(text.parse().unwrap());
            let a = estimate_vector(&plan, &p, &SeedRecipe::new(9)).unwrap();
            let b = estimate_vector(&plan, &p, &SeedRecipe::new(9)).unwrap();
            let c = estimate_vector(&plan, &p, &SeedRecipe::new(10)).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, c);
            a.check_invariants(&plan, 1e-9).unwrap();
            let (even, odd) = tally_trials(&plan, &p, &SeedRecipe::new(9)).unwrap();
            assert_eq!(even.total(), 50 * 40);
            assert_eq!(odd.total(), 50 * 40);
        }
    }

    #[test]
    fn estimate_independent_of_thread_count() {
        let p = SoupParams::default().with_trials(64);
        let plan = classify("B36/S23".parse().unwrap());
        let recipe = SeedRecipe::new(1);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| estimate_vector(&plan, &p, &recipe).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn life_vector_matches_zero_pattern() {
        let p = SoupParams::default().with_trials(200);
        let plan = classify(Rule::life());
        let v = estimate_vector(&plan, &p, &SeedRecipe::new(5)).unwrap();
        v.check_invariants(&plan, 1e-9).unwrap();
        for n in 0..=8 {
            let b = v.get(Half::Even, Transition::Born, n);
            let s = v.get(Half::Even, Transition::Survive, n);
            assert_eq!(b > 0.0, n == 3, "B{n} = {b}");
            if s > 0.0 {
                assert!(n == 2 || n == 3);
            }
        }
    }

    #[test]
    fn from_counts_rejects_empty_half() {
        let mut even = TransitionCounts::new();
        even.record(Transition::Born, 3);
        assert_eq!(
            BehaviourVector::from_counts(&even, &TransitionCounts::new()),
            Err(SamplingError::EmptyTally("odd"))
        );
    }
}
