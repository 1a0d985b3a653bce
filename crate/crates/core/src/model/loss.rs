//! Triplet hinge loss with min-over-negatives, the global orthogonal
//! regularizer (GOR), and their exact gradients with respect to the raw
//! embeddings.
//!
//! For unit vectors `D²(a, b) = 2 - 2aᵀb`, so per row
//!
//! ```text
//! ℓ = [D²(u, v_j) - min_k D²(u, v_k) + α]₊ = [2uᵀv_k* - 2uᵀv_j + α]₊
//! ```
//!
//! and with `s_q = v_jᵀv_k` over all `Q = |B|·|N|` (positive, negative) pairs
//!
//! ```text
//! GOR = (mean s_q)² + [mean s_q² - 1/d]₊
//! ```

use std::collections::BTreeMap;

use super::ModelParams;
use crate::geometry::{dot, normalize_backward_into};

/// One mini-batch of triplets; `negatives` is row-major `len() × n_negatives`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripletBatch {
    pub users: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub n_negatives: usize,
}

impl TripletBatch {
    pub fn new(
        users: Vec<usize>,
        positives: Vec<usize>,
        negatives: Vec<usize>,
        n_negatives: usize,
    ) -> Self {
        assert_eq!(users.len(), positives.len());
        assert!(n_negatives >= 1);
        assert_eq!(negatives.len(), users.len() * n_negatives);
        Self {
            users,
            positives,
            negatives,
            n_negatives,
        }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn negatives_of(&self, row: usize) -> &[usize] {
        &self.negatives[row * self.n_negatives..(row + 1) * self.n_negatives]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletEval {
    /// Sum of per-row hinge losses.
    pub loss: f64,
    pub active: Vec<bool>,
    /// Negative slot (not item index) with the smallest distance per row.
    pub argmin: Vec<usize>,
}

/// `2 - 2aᵀb`, the squared distance between unit vectors.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    2.0 - 2.0 * dot(a, b)
}

/// Unit vectors for every row the batch touches.
struct UnitCache {
    dim: usize,
    users: BTreeMap<usize, Vec<f64>>,
    items: BTreeMap<usize, Vec<f64>>,
}

impl UnitCache {
    fn new(params: &ModelParams, batch: &TripletBatch) -> Self {
        let mut users = BTreeMap::new();
        let mut items = BTreeMap::new();
        for &u in &batch.users {
            users.entry(u).or_insert_with(|| params.user_unit(u));
        }
        for &j in batch.positives.iter().chain(&batch.negatives) {
            items.entry(j).or_insert_with(|| params.item_unit(j));
        }
        Self {
            dim: params.dim(),
            users,
            items,
        }
    }

    fn user(&self, u: usize) -> &[f64] {
        &self.users[&u]
    }

    fn item(&self, j: usize) -> &[f64] {
        &self.items[&j]
    }
}

fn triplet_with_cache(cache: &UnitCache, batch: &TripletBatch, margin: f64) -> TripletEval {
    let mut loss = 0.0;
    let mut active = Vec::with_capacity(batch.len());
    let mut argmin = Vec::with_capacity(batch.len());
    for row in 0..batch.len() {
        let u = cache.user(batch.users[row]);
        let d_pos = squared_distance(u, cache.item(batch.positives[row]));
        let (slot, d_neg) = batch
            .negatives_of(row)
            .iter()
            .enumerate()
            .map(|(slot, &k)| (slot, squared_distance(u, cache.item(k))))
            .fold(
                (0, f64::INFINITY),
                |best, cur| if cur.1 < best.1 { cur } else { best },
            );
        let l = (d_pos - d_neg + margin).max(0.0);
        loss += l;
        active.push(l > 0.0);
        argmin.push(slot);
    }
    TripletEval {
        loss,
        active,
        argmin,
    }
}

/// Returns `(mean s, mean s²)` over all (positive, negative) pairs.
fn gor_moments(cache: &UnitCache, batch: &TripletBatch) -> (f64, f64) {
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for row in 0..batch.len() {
        let v = cache.item(batch.positives[row]);
        for &k in batch.negatives_of(row) {
            let s = dot(v, cache.item(k));
            m1 += s;
            m2 += s * s;
        }
    }
    let q = batch.negatives.len() as f64;
    (m1 / q, m2 / q)
}

fn gor_from_moments(m1: f64, m2: f64, dim: usize) -> f64 {
    m1 * m1 + (m2 - 1.0 / dim as f64).max(0.0)
}

/// Sum over rows of the hinge loss, with ties in the min broken toward the
/// lowest negative slot.
pub fn triplet_loss_batch(params: &ModelParams, batch: &TripletBatch, margin: f64) -> TripletEval {
    triplet_with_cache(&UnitCache::new(params, batch), batch, margin)
}

pub fn gor_loss_batch(params: &ModelParams, batch: &TripletBatch) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    let cache = UnitCache::new(params, batch);
    let (m1, m2) = gor_moments(&cache, batch);
    gor_from_moments(m1, m2, params.dim())
}

/// Sparse gradient rows for the raw user and item matrices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchGradients {
    pub users: BTreeMap<usize, Vec<f64>>,
    pub items: BTreeMap<usize, Vec<f64>>,
}

impl BatchGradients {
    pub fn is_zero(&self) -> bool {
        self.users
            .values()
            .chain(self.items.values())
            .all(|g| g.iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub triplet: TripletEval,
    pub gor: f64,
    /// `triplet + λ_g · gor`.
    pub total: f64,
}

fn axpy(dst: &mut [f64], a: f64, x: &[f64]) {
    for (d, &v) in dst.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Loss and exact gradient of `L = L_triplet + λ_g · L_GOR` with respect to
/// the raw embeddings.
pub fn forward_backward(
    params: &ModelParams,
    batch: &TripletBatch,
    margin: f64,
    lambda_gor: f64,
) -> (LossBreakdown, BatchGradients) {
    let cache = UnitCache::new(params, batch);
    let dim = cache.dim;
    let triplet = triplet_with_cache(&cache, batch, margin);

    // Gradients with respect to the unit vectors first.
    let mut unit_users: BTreeMap<usize, Vec<f64>> =
        cache.users.keys().map(|&u| (u, vec![0.0; dim])).collect();
    let mut unit_items: BTreeMap<usize, Vec<f64>> =
        cache.items.keys().map(|&j| (j, vec![0.0; dim])).collect();

    for row in 0..batch.len() {
        if !triplet.active[row] {
            continue;
        }
        let (u_idx, j_idx) = (batch.users[row], batch.positives[row]);
        let k_idx = batch.negatives_of(row)[triplet.argmin[row]];
        let (u, vj, vk) = (cache.user(u_idx), cache.item(j_idx), cache.item(k_idx));
        // ℓ = 2uᵀv_k - 2uᵀv_j + α
        let gu = unit_users.get_mut(&u_idx).expect("cached user");
        axpy(gu, 2.0, vk);
        axpy(gu, -2.0, vj);
        axpy(unit_items.get_mut(&j_idx).expect("cached item"), -2.0, u);
        axpy(unit_items.get_mut(&k_idx).expect("cached item"), 2.0, u);
    }

    let mut gor = 0.0;
    if !batch.is_empty() {
        let (m1, m2) = gor_moments(&cache, batch);
        gor = gor_from_moments(m1, m2, dim);
        if lambda_gor != 0.0 {
            let q = batch.negatives.len() as f64;
            let second_active = m2 - 1.0 / dim as f64 > 0.0;
            for row in 0..batch.len() {
                let j_idx = batch.positives[row];
                for &k_idx in batch.negatives_of(row) {
                    let (vj, vk) = (cache.item(j_idx), cache.item(k_idx));
                    let s = dot(vj, vk);
                    let mut ds = 2.0 * m1 / q;
                    if second_active {
                        ds += 2.0 * s / q;
                    }
                    let coeff = lambda_gor * ds;
                    axpy(unit_items.get_mut(&j_idx).expect("cached item"), coeff, vk);
                    axpy(unit_items.get_mut(&k_idx).expect("cached item"), coeff, vj);
                }
            }
        }
    }

    let mut grads = BatchGradients::default();
    for (u, g) in unit_users {
        let mut out = vec![0.0; dim];
        normalize_backward_into(params.user_row(u), &g, &mut out);
        grads.users.insert(u, out);
    }
    for (j, g) in unit_items {
        let mut out = vec![0.0; dim];
        normalize_backward_into(params.item_row(j), &g, &mut out);
        grads.items.insert(j, out);
    }
    let total = triplet.loss + lambda_gor * gor;
    (
        LossBreakdown {
            triplet,
            gor,
            total,
        },
        grads,
    )
}

pub fn backward(
    params: &ModelParams,
    batch: &TripletBatch,
    margin: f64,
    lambda_gor: f64,
) -> BatchGradients {
    forward_backward(params, batch, margin, lambda_gor).1
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Two users, items placed explicitly in 2-D.
    fn params_2d(users: &[[f64; 2]], items: &[[f64; 2]]) -> ModelParams {
        ModelParams::from_raw(
            users.len(),
            items.len(),
            2,
            users.iter().flatten().copied().collect(),
            items.iter().flatten().copied().collect(),
        )
    }

    fn single(user: usize, pos: usize, negs: &[usize]) -> TripletBatch {
        TripletBatch::new(vec![user], vec![pos], negs.to_vec(), negs.len())
    }

    #[test]
    fn margin_satisfied_is_inactive() {
        let p = params_2d(&[[1.0, 0.0]], &[[1.0, 0.0], [0.0, 1.0]]);
        let eval = triplet_loss_batch(&p, &single(0, 0, &[1]), 1.0);
        assert_eq!(eval.loss, 0.0);
        assert_eq!(eval.active, vec![false]);
    }

    #[test]
    fn violated_margin_is_active() {
        let p = params_2d(&[[1.0, 0.0]], &[[0.0, 1.0], [1.0, 0.0]]);
        let eval = triplet_loss_batch(&p, &single(0, 0, &[1]), 1.0);
        assert!((eval.loss - 3.0).abs() < 1e-12);
        assert_eq!(eval.active, vec![true]);
    }

    #[test]
    fn closest_negative_defines_the_loss() {
        // u = e0; D² = 2 - 2cosθ. Positive at D²=1 (cos 0.5), negatives at
        // D²=0.5 (cos 0.75) and D²=1.5 (cos 0.25).
        let at = |c: f64| [c, (1.0 - c * c).sqrt()];
        let p = params_2d(&[[1.0, 0.0]], &[at(0.5), at(0.25), at(0.75)]);
        let eval = triplet_loss_batch(&p, &single(0, 0, &[1, 2]), 1.0);
        assert!((eval.loss - 1.5).abs() < 1e-12);
        assert_eq!(eval.argmin, vec![1]);
    }

    #[test]
    fn argmin_ties_go_to_lowest_slot() {
        let p = params_2d(&[[1.0, 0.0]], &[[0.0, 1.0], [1.0, 0.0], [1.0, 0.0]]);
        let eval = triplet_loss_batch(&p, &single(0, 0, &[2, 1]), 1.0);
        assert_eq!(eval.argmin, vec![0]);
    }

    #[test]
    fn gor_examples() {
        let p = params_2d(&[[1.0, 0.0]], &[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]]);
        assert!(gor_loss_batch(&p, &single(0, 0, &[1])).abs() < 1e-15);
        assert!((gor_loss_batch(&p, &single(0, 0, &[0])) - 1.5).abs() < 1e-12);

        let items: Vec<f64> = [[1.0, 0.0, 0.0, 0.0], [-1.0, 0.0, 0.0, 0.0]]
            .iter()
            .flatten()
            .copied()
            .collect();
        let p4 = ModelParams::from_raw(1, 2, 4, vec![1.0, 0.0, 0.0, 0.0], items);
        let batch = TripletBatch::new(vec![0, 0], vec![0, 0], vec![0, 1], 1);
        assert!((gor_loss_batch(&p4, &batch) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn inactive_triplet_without_gor_has_zero_gradient() {
        let p = params_2d(&[[1.0, 0.0]], &[[1.0, 0.0], [0.0, 1.0]]);
        let g = backward(&p, &single(0, 0, &[1]), 1.0, 0.0);
        assert!(g.is_zero());
        assert_eq!(g.users.len(), 1);
        assert_eq!(g.items.len(), 2);
    }

    #[test]
    fn active_user_gradient_before_normalization() {
        // At unit-norm raw vectors the unit-space gradient w.r.t. u is
        // 2(v_k* - v_j); its tangential part is what reaches the raw row.
        let u = [0.6, 0.8, 0.0];
        let vj = [0.0, 0.0, 1.0];
        let vk = [0.8, 0.6, 0.0];
        let p = ModelParams::from_raw(
            1,
            2,
            3,
            u.to_vec(),
            [vj, vk].iter().flatten().copied().collect(),
        );
        let g = backward(&p, &single(0, 0, &[1]), 1.0, 0.0);
        let unit_grad: Vec<f64> = vk.iter().zip(&vj).map(|(a, b)| 2.0 * (a - b)).collect();
        let radial = dot(&u, &unit_grad);
        for i in 0..3 {
            let expected = unit_grad[i] - radial * u[i];
            assert!((g.users[&0][i] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn squared_distance_identity() {
        let a = [0.6, 0.8];
        let b = [0.0, 1.0];
        let direct: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((squared_distance(&a, &b) - direct).abs() < 1e-12);
    }
}
