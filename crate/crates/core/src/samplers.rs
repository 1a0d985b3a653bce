//! Negative sampling: uniform rejection sampling, popularity-smoothed sampling
//! through a Vose alias table, and the two-stage sampler that draws a
//! popularity-weighted candidate pool and then re-weights candidates by the
//! inverse spherical dot-product density against the positive item.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::dataset::UserItemIndex;
use crate::geometry::{dot, normalize_into, SphereDensity};

/// Rejection attempts per requested negative before giving up on a user.
const MAX_REJECTIONS_PER_DRAW: usize = 100_000;

/// Draws of an already-taken item tolerated per slot before repeats are kept.
const MAX_REPEATS_PER_DRAW: usize = 1_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("alias table needs at least one positive weight")]
    EmptyDistribution,
    #[error("invalid weight {weight} at index {index}")]
    InvalidWeight { index: usize, weight: f64 },
    #[error("user {user} has no admissible negative item")]
    NoAdmissibleNegative { user: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
}

/// Vose alias table: O(n) build, O(1) draws.
#[derive(Debug, Clone, PartialEq)]
pub struct AliasTable {
    prob: Vec<f64>,
    alias: Vec<usize>,
    weights: Vec<f64>,
    total: f64,
}

impl AliasTable {
    pub fn new(weights: Vec<f64>) -> Result<Self, SamplingError> {
        for (index, &weight) in weights.iter().enumerate() {
            if !(weight >= 0.0 && weight.is_finite()) {
                return Err(SamplingError::InvalidWeight { index, weight });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(SamplingError::EmptyDistribution);
        }
        let n = weights.len();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut prob = vec![0.0; n];
        let mut alias: Vec<usize> = (0..n).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(&s), Some(&l)) = (small.last(), large.last()) {
            small.pop();
            prob[s] = scaled[s];
            alias[s] = l;
            scaled[l] = (scaled[l] + scaled[s]) - 1.0;
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // Whatever is left holds (up to rounding) exactly one unit of mass.
        for i in large.into_iter().chain(small) {
            prob[i] = 1.0;
        }
        Ok(Self {
            prob,
            alias,
            weights,
            total,
        })
    }

    /// Weights `f(j)^β`; zero-frequency items get weight 0 for every β.
    pub fn from_frequencies(freq: &[usize], beta: f64) -> Result<Self, SamplingError> {
        if !beta.is_finite() {
            return Err(SamplingError::InvalidConfig(format!(
                "beta must be finite, got {beta}"
            )));
        }
        let weights = freq
            .iter()
            .map(|&f| if f == 0 { 0.0 } else { (f as f64).powf(beta) })
            .collect();
        Self::new(weights)
    }

    pub fn len(&self) -> usize {
        self.prob.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prob.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Target probability `w_j / Σw`.
    pub fn target_probability(&self, j: usize) -> f64 {
        self.weights[j] / self.total
    }

    /// Probability of `j` implied by the `(prob, alias)` columns.
    pub fn reconstructed_probabilities(&self) -> Vec<f64> {
        let n = self.len() as f64;
        let mut out: Vec<f64> = self.prob.iter().map(|p| p / n).collect();
        for (i, &a) in self.alias.iter().enumerate() {
            out[a] += (1.0 - self.prob[i]) / n;
        }
        out
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let column = rng.random_range(0..self.prob.len());
        if rng.random::<f64>() < self.prob[column] {
            column
        } else {
            self.alias[column]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Uniform,
    Popularity,
    TwoStage,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Uniform, Strategy::Popularity, Strategy::TwoStage];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Uniform => "uniform",
            Strategy::Popularity => "popularity",
            Strategy::TwoStage => "two_stage",
        })
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "uniform" | "uni" => Ok(Strategy::Uniform),
            "popularity" | "pop" => Ok(Strategy::Popularity),
            "two_stage" | "two-stage" | "2st" => Ok(Strategy::TwoStage),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub strategy: Strategy,
    pub beta: f64,
    /// Candidate pool size `C` for the two-stage strategy.
    pub candidates: usize,
    /// `|N_ij|`.
    pub negatives: usize,
    /// Upper clamp on `s` before evaluating the density.
    pub s_clamp: f64,
}

pub const DEFAULT_S_CLAMP: f64 = 1.0 - 1e-3;

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::TwoStage,
            beta: 1.0,
            candidates: 2000,
            negatives: 5,
            s_clamp: DEFAULT_S_CLAMP,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplingError> {
        if self.negatives == 0 {
            return Err(SamplingError::InvalidConfig(
                "negatives must be at least 1".into(),
            ));
        }
        if self.strategy == Strategy::TwoStage && self.candidates < self.negatives {
            return Err(SamplingError::InvalidConfig(format!(
                "candidates ({}) must be >= negatives ({})",
                self.candidates, self.negatives
            )));
        }
        if !(self.s_clamp > 0.0 && self.s_clamp < 1.0) {
            return Err(SamplingError::InvalidConfig(format!(
                "s_clamp must lie in (0, 1), got {}",
                self.s_clamp
            )));
        }
        if !self.beta.is_finite() {
            return Err(SamplingError::InvalidConfig(format!(
                "beta must be finite, got {}",
                self.beta
            )));
        }
        Ok(())
    }
}

/// `n` items uniform over `[0, num_items)` excluding the user's positives.
/// Slots are distinct unless fewer than `n` items are admissible.
pub fn uniform_negatives<R: Rng + ?Sized>(
    index: &UserItemIndex,
    user: usize,
    n: usize,
    num_items: usize,
    rng: &mut R,
) -> Result<Vec<usize>, SamplingError> {
    if index.degree(user) >= num_items {
        return Err(SamplingError::NoAdmissibleNegative { user });
    }
    let distinct = num_items - index.degree(user) >= n;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let j = rng.random_range(0..num_items);
        if !index.contains(user, j) && !(distinct && out.contains(&j)) {
            out.push(j);
        }
    }
    Ok(out)
}

/// `n` items from the alias table excluding the user's positives. Slots are
/// distinct unless repeated draws keep hitting items already taken.
pub fn popularity_negatives<R: Rng + ?Sized>(
    table: &AliasTable,
    index: &UserItemIndex,
    user: usize,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>, SamplingError> {
    let mut out = Vec::with_capacity(n);
    let mut rejections = 0;
    let mut repeats = 0;
    while out.len() < n {
        let j = table.sample(rng);
        if index.contains(user, j) {
            rejections += 1;
            if rejections > MAX_REJECTIONS_PER_DRAW * n {
                return Err(SamplingError::NoAdmissibleNegative { user });
            }
        } else if out.contains(&j) && repeats < MAX_REPEATS_PER_DRAW * n {
            repeats += 1;
        } else {
            out.push(j);
        }
    }
    Ok(out)
}

/// `C` item indices drawn with replacement from the popularity table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidatePool {
    pub items: Vec<usize>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub fn draw_candidates<R: Rng + ?Sized>(
    table: &AliasTable,
    c: usize,
    rng: &mut R,
) -> CandidatePool {
    CandidatePool {
        items: (0..c).map(|_| table.sample(rng)).collect(),
    }
}

/// Candidate pool together with unit-normalized item vectors (row-major,
/// `dim` columns) aligned with the pool entries.
#[derive(Debug, Clone)]
pub struct PoolVectors {
    pub pool: CandidatePool,
    pub vectors: Vec<f64>,
    pub dim: usize,
}

impl PoolVectors {
    /// Normalizes the raw item rows referenced by `pool`.
    pub fn from_raw(pool: CandidatePool, item_raw: &[f64], dim: usize) -> Self {
        let mut vectors = vec![0.0; pool.len() * dim];
        for (slot, &item) in vectors.chunks_exact_mut(dim).zip(&pool.items) {
            normalize_into(&item_raw[item * dim..(item + 1) * dim], slot);
        }
        Self { pool, vectors, dim }
    }

    pub fn vector(&self, position: usize) -> &[f64] {
        &self.vectors[position * self.dim..(position + 1) * self.dim]
    }
}

/// Second-stage weights per pool position: `1 / p(min(s, s_clamp))` for
/// `s >= 0`, 0 for `s < 0` and for the user's positives.
pub fn second_stage_weights(
    pos_vec: &[f64],
    pool: &PoolVectors,
    index: &UserItemIndex,
    user: usize,
    density: &SphereDensity,
    s_clamp: f64,
) -> Vec<f64> {
    pool.pool
        .items
        .iter()
        .enumerate()
        .map(|(position, &item)| {
            if index.contains(user, item) {
                return 0.0;
            }
            let s = dot(pos_vec, pool.vector(position));
            if s >= 0.0 {
                (-density.log_density(s.min(s_clamp))).exp()
            } else {
                0.0
            }
        })
        .collect()
}

/// Picks `n` distinct pool positions from `weights` by sequential weighted
/// draws without replacement. Once the positive-weight positions run out the
/// remaining slots come uniformly from the other admissible positions, and
/// once those run out too, uniformly with replacement from all admissible
/// positions. Returns `None` when nothing is admissible.
pub fn select_positions<R: Rng + ?Sized>(
    weights: &[f64],
    admissible: &[bool],
    n: usize,
    rng: &mut R,
) -> Option<Vec<usize>> {
    let admissible_positions: Vec<usize> = (0..weights.len()).filter(|&p| admissible[p]).collect();
    if admissible_positions.is_empty() {
        return None;
    }
    let mut remaining = weights.to_vec();
    let mut taken = vec![false; weights.len()];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let total: f64 = remaining.iter().sum();
        if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (p, &w) in remaining.iter().enumerate() {
                if w > 0.0 {
                    chosen = Some(p);
                    if target < w {
                        break;
                    }
                    target -= w;
                }
            }
            let p = chosen.expect("positive total implies a positive weight");
            remaining[p] = 0.0;
            taken[p] = true;
            out.push(p);
            continue;
        }
        let untaken: Vec<usize> = admissible_positions
            .iter()
            .copied()
            .filter(|&p| !taken[p])
            .collect();
        if let Some(&p) = pick(&untaken, rng) {
            taken[p] = true;
            out.push(p);
        } else {
            let &p = pick(&admissible_positions, rng).expect("non-empty");
            out.push(p);
        }
    }
    Some(out)
}

fn pick<'a, T, R: Rng + ?Sized>(xs: &'a [T], rng: &mut R) -> Option<&'a T> {
    if xs.is_empty() {
        None
    } else {
        Some(&xs[rng.random_range(0..xs.len())])
    }
}

/// Second stage for a single (user, positive) pair: item indices of the
/// selected negatives, or `None` if the pool has no admissible candidate.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_select<R: Rng + ?Sized>(
    pos_vec: &[f64],
    pool: &PoolVectors,
    index: &UserItemIndex,
    user: usize,
    n: usize,
    density: &SphereDensity,
    s_clamp: f64,
    rng: &mut R,
) -> Option<Vec<usize>> {
    let weights = second_stage_weights(pos_vec, pool, index, user, density, s_clamp);
    let admissible: Vec<bool> = pool
        .pool
        .items
        .iter()
        .map(|&j| !index.contains(user, j))
        .collect();
    let positions = select_positions(&weights, &admissible, n, rng)?;
    Some(positions.into_iter().map(|p| pool.pool.items[p]).collect())
}

/// Per-strategy negative sampler used by the training loop.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    config: SamplerConfig,
    num_items: usize,
    table: Option<AliasTable>,
    density: Option<SphereDensity>,
}

impl NegativeSampler {
    /// `item_freq` are the training-set frequencies used for the popularity
    /// table; `dim` is the embedding dimension for the density.
    pub fn new(
        config: SamplerConfig,
        item_freq: &[usize],
        dim: usize,
    ) -> Result<Self, SamplingError> {
        config.validate()?;
        let table = match config.strategy {
            Strategy::Uniform => None,
            Strategy::Popularity | Strategy::TwoStage => {
                Some(AliasTable::from_frequencies(item_freq, config.beta)?)
            }
        };
        let density = match config.strategy {
            Strategy::TwoStage => Some(
                SphereDensity::new(dim).map_err(|e| SamplingError::InvalidConfig(e.to_string()))?,
            ),
            _ => None,
        };
        Ok(Self {
            config,
            num_items: item_freq.len(),
            table,
            density,
        })
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.config
    }

    pub fn table(&self) -> Option<&AliasTable> {
        self.table.as_ref()
    }

    /// Draws the shared candidate pool for one mini-batch (two-stage only).
    pub fn draw_pool<R: Rng + ?Sized>(
        &self,
        item_raw: &[f64],
        dim: usize,
        rng: &mut R,
    ) -> Option<PoolVectors> {
        match (self.config.strategy, &self.table) {
            (Strategy::TwoStage, Some(table)) => {
                let pool = draw_candidates(table, self.config.candidates, rng);
                Some(PoolVectors::from_raw(pool, item_raw, dim))
            }
            _ => None,
        }
    }

    /// Negatives for every (user, positive) row, flattened `rows × negatives`.
    /// `pool` must come from [`Self::draw_pool`] for the two-stage strategy.
    pub fn sample_batch<R: Rng + ?Sized>(
        &self,
        index: &UserItemIndex,
        rows: &[(usize, usize)],
        item_raw: &[f64],
        dim: usize,
        pool: Option<&PoolVectors>,
        rng: &mut R,
    ) -> Result<Vec<usize>, SamplingError> {
        let n = self.config.negatives;
        let mut out = Vec::with_capacity(rows.len() * n);
        let mut pos_vec = vec![0.0; dim];
        let mut redrawn: Option<PoolVectors> = None;
        for &(user, positive) in rows {
            let negatives = match self.config.strategy {
                Strategy::Uniform => uniform_negatives(index, user, n, self.num_items, rng)?,
                Strategy::Popularity => popularity_negatives(
                    self.table.as_ref().expect("popularity table"),
                    index,
                    user,
                    n,
                    rng,
                )?,
                Strategy::TwoStage => {
                    let density = self.density.as_ref().expect("two-stage density");
                    let pool = pool.expect("two-stage sampling needs a candidate pool");
                    normalize_into(
                        &item_raw[positive * dim..(positive + 1) * dim],
                        &mut pos_vec,
                    );
                    match two_stage_select(
                        &pos_vec,
                        pool,
                        index,
                        user,
                        n,
                        density,
                        self.config.s_clamp,
                        rng,
                    ) {
                        Some(sel) => sel,
                        None => {
                            let fresh = self.draw_pool(item_raw, dim, rng).expect("two-stage pool");
                            let fresh = redrawn.insert(fresh);
                            two_stage_select(
                                &pos_vec,
                                fresh,
                                index,
                                user,
                                n,
                                density,
                                self.config.s_clamp,
                                rng,
                            )
                            .ok_or(SamplingError::NoAdmissibleNegative { user })?
                        }
                    }
                }
            };
            out.extend(negatives);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::InteractionSet;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probs(table: &AliasTable) -> Vec<f64> {
        (0..table.len())
            .map(|j| table.target_probability(j))
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn popularity_table_probabilities() {
        let t = AliasTable::from_frequencies(&[1, 3], 1.0).unwrap();
        assert_close(&probs(&t), &[0.25, 0.75], 1e-15);
        assert_close(&t.reconstructed_probabilities(), &[0.25, 0.75], 1e-12);

        let t = AliasTable::from_frequencies(&[7, 2, 9], 0.0).unwrap();
        assert_close(&t.reconstructed_probabilities(), &[1.0 / 3.0; 3], 1e-12);

        let t = AliasTable::from_frequencies(&[4, 1], 0.5).unwrap();
        assert_close(
            &t.reconstructed_probabilities(),
            &[2.0 / 3.0, 1.0 / 3.0],
            1e-12,
        );
    }

    #[test]
    fn zero_frequency_items_are_excluded() {
        for beta in [-1.0, 0.0, 0.8] {
            let t = AliasTable::from_frequencies(&[0, 5, 2], beta).unwrap();
            assert_eq!(t.reconstructed_probabilities()[0], 0.0);
        }
        assert_eq!(
            AliasTable::from_frequencies(&[0, 0], 1.0).unwrap_err(),
            SamplingError::EmptyDistribution
        );
        assert!(AliasTable::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn alias_draw_frequency() {
        let t = AliasTable::from_frequencies(&[1, 3], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 1_000_000;
        let ones = (0..draws).filter(|_| t.sample(&mut rng) == 1).count();
        let freq = ones as f64 / draws as f64;
        assert!((0.748..=0.752).contains(&freq), "{freq}");
    }

    #[test]
    fn single_item_table_and_reproducibility() {
        let t = AliasTable::from_frequencies(&[9], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!((0..100).all(|_| t.sample(&mut rng) == 0));

        let t = AliasTable::from_frequencies(&[3, 1, 4, 1, 5], 1.0).unwrap();
        let a: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| t.sample(&mut rng)).collect()
        };
        let b: Vec<_> = {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            (0..50).map(|_| t.sample(&mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    fn index_of(num_users: usize, num_items: usize, pairs: &[(usize, usize)]) -> UserItemIndex {
        UserItemIndex::from_set(&InteractionSet::from_pairs(
            num_users,
            num_items,
            pairs.iter().copied(),
        ))
    }

    #[test]
    fn uniform_negatives_single_admissible_item() {
        let index = index_of(1, 3, &[(0, 0), (0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(
                uniform_negatives(&index, 0, 3, 3, &mut rng).unwrap(),
                vec![2, 2, 2]
            );
        }
    }

    #[test]
    fn uniform_negatives_never_return_positives() {
        let index = index_of(1, 10, &[(0, 2), (0, 5), (0, 7)]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10_000 {
            for j in uniform_negatives(&index, 0, 2, 10, &mut rng).unwrap() {
                assert!(![2, 5, 7].contains(&j));
            }
        }
    }

    #[test]
    fn uniform_negatives_are_uniform() {
        let index = index_of(1, 4, &[(0, 0)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[uniform_negatives(&index, 0, 1, 4, &mut rng).unwrap()[0]] += 1;
        }
        assert_eq!(counts[0], 0);
        for &c in &counts[1..] {
            let f = c as f64 / draws as f64;
            assert!((0.328..=0.339).contains(&f), "{f}");
        }
    }

    #[test]
    fn negatives_are_distinct_within_a_triplet() {
        let index = UserItemIndex::from_pairs(1, &[(0, 0)]);
        let table = AliasTable::from_frequencies(&[50, 40, 1, 1, 1, 1], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let mut u = uniform_negatives(&index, 0, 5, 6, &mut rng).unwrap();
            u.sort_unstable();
            assert_eq!(u, vec![1, 2, 3, 4, 5]);
            let mut p = popularity_negatives(&table, &index, 0, 3, &mut rng).unwrap();
            p.sort_unstable();
            p.dedup();
            assert_eq!(p.len(), 3);
        }
    }

    #[test]
    fn uniform_negatives_fail_when_everything_is_positive() {
        let index = index_of(1, 2, &[(0, 0), (0, 1)]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            uniform_negatives(&index, 0, 1, 2, &mut rng).unwrap_err(),
            SamplingError::NoAdmissibleNegative { user: 0 }
        );
    }

    #[test]
    fn candidate_pools() {
        let t = AliasTable::from_frequencies(&[5, 2, 8, 1], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pool = draw_candidates(&t, 2000, &mut rng);
        assert_eq!(pool.len(), 2000);
        assert!(pool.items.iter().all(|&j| j < 4));

        let sharp = AliasTable::from_frequencies(&[1, 100], 20.0).unwrap();
        let pool = draw_candidates(&sharp, 2000, &mut rng);
        assert!(pool.items.iter().filter(|&&j| j == 1).count() >= 1999);

        let a = draw_candidates(&t, 64, &mut ChaCha8Rng::seed_from_u64(5));
        let b = draw_candidates(&t, 64, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    /// Pool whose item `j` sits at dot product `dots[j]` with the positive
    /// vector `e0` in 3 dimensions.
    fn pool_at(dots: &[f64]) -> (Vec<f64>, PoolVectors) {
        let mut vectors = Vec::new();
        for &s in dots {
            vectors.extend([s, (1.0 - s * s).sqrt(), 0.0]);
        }
        let pool = CandidatePool {
            items: (0..dots.len()).collect(),
        };
        (
            vec![1.0, 0.0, 0.0],
            PoolVectors {
                pool,
                vectors,
                dim: 3,
            },
        )
    }

    #[test]
    fn only_non_negative_dot_product_is_selected() {
        let mut dots = vec![-0.5; 9];
        dots.insert(4, 0.9);
        let (pos, pool) = pool_at(&dots);
        let index = index_of(1, 10, &[]);
        let density = SphereDensity::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..1000 {
            let sel = two_stage_select(
                &pos,
                &pool,
                &index,
                0,
                1,
                &density,
                DEFAULT_S_CLAMP,
                &mut rng,
            )
            .unwrap();
            assert_eq!(sel, vec![4]);
        }
    }

    #[test]
    fn constant_density_gives_even_split() {
        let (pos, pool) = pool_at(&[0.0, 0.5]);
        let index = index_of(1, 2, &[]);
        let density = SphereDensity::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let trials = 100_000;
        let hits = (0..trials)
            .filter(|_| {
                two_stage_select(
                    &pos,
                    &pool,
                    &index,
                    0,
                    1,
                    &density,
                    DEFAULT_S_CLAMP,
                    &mut rng,
                )
                .unwrap()[0]
                    == 0
            })
            .count();
        let f = hits as f64 / trials as f64;
        let sigma = (0.25f64 / trials as f64).sqrt();
        assert!((f - 0.5).abs() < 3.0 * sigma, "{f}");
    }

    #[test]
    fn positives_are_never_selected() {
        let (pos, pool) = pool_at(&[0.95, 0.1, 0.2]);
        let index = index_of(1, 3, &[(0, 0)]);
        let density = SphereDensity::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let sel = two_stage_select(
                &pos,
                &pool,
                &index,
                0,
                2,
                &density,
                DEFAULT_S_CLAMP,
                &mut rng,
            )
            .unwrap();
            assert!(!sel.contains(&0));
            assert_ne!(sel[0], sel[1]);
        }
    }

    #[test]
    fn fallback_when_all_dots_negative() {
        let (pos, pool) = pool_at(&[-0.3, -0.6, -0.9]);
        let index = index_of(1, 3, &[(0, 1)]);
        let density = SphereDensity::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut seen = [false; 3];
        for _ in 0..200 {
            let sel = two_stage_select(
                &pos,
                &pool,
                &index,
                0,
                1,
                &density,
                DEFAULT_S_CLAMP,
                &mut rng,
            )
            .unwrap();
            seen[sel[0]] = true;
        }
        assert_eq!(seen, [true, false, true]);
    }

    #[test]
    fn no_admissible_candidate_yields_none() {
        let (pos, pool) = pool_at(&[0.3, 0.4]);
        let index = index_of(1, 2, &[(0, 0), (0, 1)]);
        let density = SphereDensity::new(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        assert!(two_stage_select(
            &pos,
            &pool,
            &index,
            0,
            1,
            &density,
            DEFAULT_S_CLAMP,
            &mut rng
        )
        .is_none());
    }

    #[test]
    fn selection_without_replacement_exhausts_then_repeats() {
        let weights = [1.0, 0.0, 2.0];
        let admissible = [true, true, true];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sel = select_positions(&weights, &admissible, 3, &mut rng).unwrap();
        let mut sorted = sel.clone();
        sorted.sort();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert_eq!(sel[2], 1);
        let sel = select_positions(&weights, &admissible, 5, &mut rng).unwrap();
        assert_eq!(sel.len(), 5);
    }

    #[test]
    fn config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let bad = SamplerConfig {
            candidates: 2,
            negatives: 5,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        let unused_pool = SamplerConfig {
            strategy: Strategy::Uniform,
            ..bad
        };
        assert!(unused_pool.validate().is_ok());
        let bad = SamplerConfig {
            s_clamp: 1.0,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = SamplerConfig {
            negatives: 0,
            ..SamplerConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.to_string().parse::<Strategy>().unwrap(), s);
        }
    }
}
