//! Embedding parameters and training.
//!
//! Raw user and item embeddings are stored unconstrained; every loss reads
//! their unit-normalized rows, and gradients flow back through the
//! normalization.

mod adam;
mod loss;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use loss::{
    backward, forward_backward, gor_loss_batch, squared_distance, triplet_loss_batch,
    BatchGradients, LossBreakdown, TripletBatch, TripletEval,
};
pub use train::{EpochStats, Hyper, TrainError, Trainer};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::normalize_into;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    num_users: usize,
    num_items: usize,
    dim: usize,
    /// `num_users × dim`, row-major.
    pub user_raw: Vec<f64>,
    /// `num_items × dim`, row-major.
    pub item_raw: Vec<f64>,
}

impl ModelParams {
    /// I.i.d. `N(0, 1/d)` entries, so raw rows start near unit norm.
    pub fn init(num_users: usize, num_items: usize, dim: usize, seed: u64) -> Self {
        assert!(
            num_users >= 1 && num_items >= 1 && dim >= 1,
            "empty model shape"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid std");
        let user_raw = (0..num_users * dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        let item_raw = (0..num_items * dim)
            .map(|_| normal.sample(&mut rng))
            .collect();
        Self {
            num_users,
            num_items,
            dim,
            user_raw,
            item_raw,
        }
    }

    /// Panics when the matrix lengths do not match the shape.
    pub fn from_raw(
        num_users: usize,
        num_items: usize,
        dim: usize,
        user_raw: Vec<f64>,
        item_raw: Vec<f64>,
    ) -> Self {
        assert_eq!(user_raw.len(), num_users * dim, "user matrix shape");
        assert_eq!(item_raw.len(), num_items * dim, "item matrix shape");
        Self {
            num_users,
            num_items,
            dim,
            user_raw,
            item_raw,
        }
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn user_row(&self, u: usize) -> &[f64] {
        &self.user_raw[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_row(&self, j: usize) -> &[f64] {
        &self.item_raw[j * self.dim..(j + 1) * self.dim]
    }

    pub fn user_row_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.user_raw[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.item_raw[j * self.dim..(j + 1) * self.dim]
    }

    pub fn user_unit(&self, u: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        normalize_into(self.user_row(u), &mut out);
        out
    }

    pub fn item_unit(&self, j: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        normalize_into(self.item_row(j), &mut out);
        out
    }

    /// Unit-normalized copies of every row.
    pub fn unit_embeddings(&self) -> UnitEmbeddings {
        let normalize_all = |raw: &[f64]| {
            let mut out = vec![0.0; raw.len()];
            for (dst, src) in out
                .chunks_exact_mut(self.dim)
                .zip(raw.chunks_exact(self.dim))
            {
                normalize_into(src, dst);
            }
            out
        };
        UnitEmbeddings {
            num_users: self.num_users,
            num_items: self.num_items,
            dim: self.dim,
            users: normalize_all(&self.user_raw),
            items: normalize_all(&self.item_raw),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.user_raw
            .iter()
            .chain(&self.item_raw)
            .all(|v| v.is_finite())
    }
}

/// Read-only unit-norm view of a model, used for ranking.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitEmbeddings {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub users: Vec<f64>,
    pub items: Vec<f64>,
}

impl UnitEmbeddings {
    pub fn user(&self, u: usize) -> &[f64] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item(&self, j: usize) -> &[f64] {
        &self.items[j * self.dim..(j + 1) * self.dim]
    }
}
