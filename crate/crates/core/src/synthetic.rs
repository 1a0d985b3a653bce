//! Seeded synthetic interaction data with known structure.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::InteractionSet;

/// Two disjoint user/item blocks. Inside a block, items sit on a ring and each
/// user picks from a window around a random center, so users with nearby
/// centers share items. The remaining picks come from the other block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockConfig {
    pub users: usize,
    pub items: usize,
    /// Interactions per user, own-block plus noise.
    pub per_user: usize,
    /// Fraction of each user's interactions drawn from the other block.
    pub noise: f64,
    /// Width of the ring window own-block items are drawn from.
    pub window: usize,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 400,
            per_user: 30,
            noise: 0.1,
            window: 33,
        }
    }
}

/// Block of user `u` (or item `j`) under [`planted_blocks`]: the first half of
/// each index range is block 0.
pub fn block_of(index: usize, total: usize) -> usize {
    usize::from(index >= total / 2)
}

pub fn planted_blocks(cfg: &BlockConfig, seed: u64) -> InteractionSet {
    assert!(
        cfg.users >= 2 && cfg.items >= 2,
        "need at least two users and two items"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half_items = cfg.items / 2;
    let noise = ((cfg.per_user as f64) * cfg.noise).round() as usize;
    let own = cfg.per_user - noise;
    let window = cfg.window.clamp(own, half_items);
    let mut pairs = Vec::with_capacity(cfg.users * cfg.per_user);
    for u in 0..cfg.users {
        let b = block_of(u, cfg.users);
        let (own_start, own_len) = if b == 0 {
            (0, half_items)
        } else {
            (half_items, cfg.items - half_items)
        };
        let (other_start, other_len) = if b == 0 {
            (half_items, cfg.items - half_items)
        } else {
            (0, half_items)
        };
        let center = rng.random_range(0..own_len);
        let start = center + own_len - window / 2;
        for offset in index::sample(&mut rng, window.min(own_len), own.min(own_len)) {
            pairs.push((u, own_start + (start + offset) % own_len));
        }
        for j in index::sample(&mut rng, other_len, noise.min(other_len)) {
            pairs.push((u, other_start + j));
        }
    }
    InteractionSet::from_pairs(cfg.users, cfg.items, pairs)
}

/// Users and items sit on a circle. Item `j` (0-based popularity rank) is
/// held by the `f_j ≈ scale / (j + 1)^exponent` users nearest to it, capped at
/// `max_fraction` of all users, so popular items have wide audiences and
/// niche items narrow ones. A `noise` fraction of each audience is replaced
/// by random users.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZipfConfig {
    pub users: usize,
    pub items: usize,
    pub exponent: f64,
    pub scale: f64,
    pub max_fraction: f64,
    pub noise: f64,
}

impl Default for ZipfConfig {
    fn default() -> Self {
        Self {
            users: 500,
            items: 2000,
            exponent: 1.0,
            scale: 2500.0,
            max_fraction: 0.5,
            noise: 0.1,
        }
    }
}

impl ZipfConfig {
    /// Target audience size of item `j`, at least one user.
    pub fn target_frequency(&self, j: usize) -> usize {
        let cap = (self.max_fraction * self.users as f64).floor().max(1.0);
        (self.scale / ((j + 1) as f64).powf(self.exponent))
            .round()
            .clamp(1.0, cap) as usize
    }
}

fn circular_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    d.min(1.0 - d)
}

pub fn zipf_audiences(cfg: &ZipfConfig, seed: u64) -> InteractionSet {
    assert!(cfg.users >= 1 && cfg.items >= 1, "need users and items");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let user_pos: Vec<f64> = (0..cfg.users).map(|_| rng.random::<f64>()).collect();
    let mut pairs = Vec::new();
    let mut audience = BTreeSet::new();
    let mut by_gap: Vec<(f64, usize)> = Vec::with_capacity(cfg.users);
    for j in 0..cfg.items {
        let f = cfg.target_frequency(j);
        let at = rng.random::<f64>();
        by_gap.clear();
        by_gap.extend(
            user_pos
                .iter()
                .enumerate()
                .map(|(u, &p)| (circular_gap(p, at), u)),
        );
        by_gap.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        audience.clear();
        let local = f - ((f as f64) * cfg.noise).round() as usize;
        audience.extend(by_gap.iter().take(local).map(|&(_, u)| u));
        while audience.len() < f {
            audience.insert(rng.random_range(0..cfg.users));
        }
        pairs.extend(audience.iter().map(|&u| (u, j)));
    }
    InteractionSet::from_pairs(cfg.users, cfg.items, pairs)
}
