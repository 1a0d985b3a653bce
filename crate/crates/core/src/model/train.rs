use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{forward_backward, AdamConfig, AdamState, ModelParams, TripletBatch};
use crate::dataset::{item_frequencies, UserItemIndex};
use crate::samplers::{NegativeSampler, SamplerConfig, SamplingError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid hyperparameters: {0}")]
    InvalidHyper(String),
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("training pair ({user}, {item}) is outside the model shape")]
    PairOutOfRange { user: usize, item: usize },
    #[error(transparent)]
    Sampling(#[from] SamplingError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    pub dim: usize,
    /// Margin `α`.
    pub margin: f64,
    /// GOR weight `λ_g`.
    pub lambda_gor: f64,
    pub lr: f64,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            dim: 128,
            margin: 1.0,
            lambda_gor: Self::default_lambda_gor(5),
            lr: 1e-4,
            adam: AdamConfig::default(),
            batch_size: 256,
            epochs: 50,
            seed: 0,
        }
    }
}

impl Hyper {
    /// 0.01 for one or two negatives per triplet, 0.001 beyond that.
    pub fn default_lambda_gor(negatives: usize) -> f64 {
        if negatives <= 2 {
            0.01
        } else {
            0.001
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::InvalidHyper(msg));
        if self.dim < 2 {
            return fail(format!("dim must be >= 2, got {}", self.dim));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return fail(format!("margin must be > 0, got {}", self.margin));
        }
        if !(self.lambda_gor >= 0.0 && self.lambda_gor.is_finite()) {
            return fail(format!("lambda_gor must be >= 0, got {}", self.lambda_gor));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail(format!("lr must be > 0, got {}", self.lr));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return fail(format!("invalid Adam settings {a:?}"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Per-pair mean of the triplet loss plus `λ_g` times the batch-averaged GOR.
    pub mean_loss: f64,
    pub active_fraction: f64,
    pub batches: usize,
}

/// Owns the parameters, optimizer state and random stream of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    params: ModelParams,
    adam: AdamState,
    hyper: Hyper,
    sampler: NegativeSampler,
    index: UserItemIndex,
    pairs: Vec<(usize, usize)>,
    rng: ChaCha8Rng,
    epochs_done: usize,
}

impl Trainer {
    /// `train_pairs` are the (user, item) pairs of the training folds. The
    /// popularity table uses their item frequencies and negatives exclude the
    /// user's training positives.
    pub fn new(
        num_users: usize,
        num_items: usize,
        train_pairs: Vec<(usize, usize)>,
        sampler: SamplerConfig,
        hyper: Hyper,
    ) -> Result<Self, TrainError> {
        let params = ModelParams::init(num_users, num_items, hyper.dim, hyper.seed);
        Self::with_params(params, train_pairs, sampler, hyper)
    }

    pub fn with_params(
        params: ModelParams,
        train_pairs: Vec<(usize, usize)>,
        sampler: SamplerConfig,
        hyper: Hyper,
    ) -> Result<Self, TrainError> {
        hyper.validate()?;
        if params.dim() != hyper.dim {
            return Err(TrainError::InvalidHyper(format!(
                "model dim {} does not match hyper dim {}",
                params.dim(),
                hyper.dim
            )));
        }
        if train_pairs.is_empty() {
            return Err(TrainError::EmptyTrainingSet);
        }
        if let Some(&(user, item)) = train_pairs
            .iter()
            .find(|&&(u, i)| u >= params.num_users() || i >= params.num_items())
        {
            return Err(TrainError::PairOutOfRange { user, item });
        }
        let freq = item_frequencies(params.num_items(), &train_pairs);
        let sampler = NegativeSampler::new(sampler, &freq, hyper.dim)?;
        let index = UserItemIndex::from_pairs(params.num_users(), &train_pairs);
        // Separate stream from the one used for initialization.
        let rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x9e37_79b9_7f4a_7c15);
        let adam = AdamState::new(&params);
        Ok(Self {
            params,
            adam,
            hyper,
            sampler,
            index,
            pairs: train_pairs,
            rng,
            epochs_done: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.pairs.len().div_ceil(self.hyper.batch_size)
    }

    /// One shuffled pass over the training pairs.
    pub fn train_epoch(&mut self) -> Result<EpochStats, TrainError> {
        self.pairs.shuffle(&mut self.rng);
        let n_neg = self.sampler.config().negatives;
        let dim = self.hyper.dim;
        let mut triplet_sum = 0.0;
        let mut gor_sum = 0.0;
        let mut active = 0usize;
        let mut batches = 0usize;
        let pairs = std::mem::take(&mut self.pairs);
        for chunk in pairs.chunks(self.hyper.batch_size) {
            let pool = self
                .sampler
                .draw_pool(&self.params.item_raw, dim, &mut self.rng);
            let negatives = self.sampler.sample_batch(
                &self.index,
                chunk,
                &self.params.item_raw,
                dim,
                pool.as_ref(),
                &mut self.rng,
            );
            let negatives = match negatives {
                Ok(n) => n,
                Err(e) => {
                    self.pairs = pairs;
                    return Err(e.into());
                }
            };
            let batch = TripletBatch::new(
                chunk.iter().map(|p| p.0).collect(),
                chunk.iter().map(|p| p.1).collect(),
                negatives,
                n_neg,
            );
            let (loss, grads) = forward_backward(
                &self.params,
                &batch,
                self.hyper.margin,
                self.hyper.lambda_gor,
            );
            self.adam
                .step(&mut self.params, &grads, self.hyper.lr, &self.hyper.adam);
            triplet_sum += loss.triplet.loss;
            gor_sum += loss.gor;
            active += loss.triplet.active.iter().filter(|&&a| a).count();
            batches += 1;
        }
        let n = pairs.len() as f64;
        self.pairs = pairs;
        self.epochs_done += 1;
        Ok(EpochStats {
            epoch: self.epochs_done,
            mean_loss: triplet_sum / n + self.hyper.lambda_gor * gor_sum / batches as f64,
            active_fraction: active as f64 / n,
            batches,
        })
    }

    /// Runs `hyper.epochs` epochs, calling `on_epoch` after each.
    pub fn fit(
        &mut self,
        mut on_epoch: impl FnMut(&EpochStats),
    ) -> Result<Vec<EpochStats>, TrainError> {
        let mut all = Vec::with_capacity(self.hyper.epochs);
        for _ in 0..self.hyper.epochs {
            let stats = self.train_epoch()?;
            on_epoch(&stats);
            all.push(stats);
        }
        Ok(all)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::Strategy;

    fn toy_pairs() -> Vec<(usize, usize)> {
        (0..1000)
            .map(|n| (n % 50, (n * 7 + n / 50) % 120))
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    fn small_hyper(batch_size: usize) -> Hyper {
        Hyper {
            dim: 8,
            batch_size,
            epochs: 2,
            lr: 0.01,
            lambda_gor: 0.01,
            ..Hyper::default()
        }
    }

    #[test]
    fn batches_per_epoch_uses_ceiling_division() {
        let pairs: Vec<_> = (0..1000).map(|n| (n / 100, n % 100 + 100)).collect();
        let t = Trainer::new(
            10,
            200,
            pairs,
            SamplerConfig {
                strategy: Strategy::Uniform,
                ..Default::default()
            },
            small_hyper(256),
        )
        .unwrap();
        assert_eq!(t.batches_per_epoch(), 4);
    }

    #[test]
    fn same_seed_same_stats() {
        for strategy in Strategy::ALL {
            let cfg = SamplerConfig {
                strategy,
                candidates: 50,
                negatives: 2,
                ..Default::default()
            };
            let run = || {
                let mut t =
                    Trainer::new(50, 120, toy_pairs(), cfg.clone(), small_hyper(64)).unwrap();
                let stats = t.fit(|_| {}).unwrap();
                (stats, t.into_params())
            };
            let (a, pa) = run();
            let (b, pb) = run();
            assert_eq!(a, b);
            assert_eq!(pa, pb);
            let expected = toy_pairs().len().div_ceil(64);
            assert!(a
                .iter()
                .all(|s| s.mean_loss.is_finite() && s.batches == expected));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = SamplerConfig::default();
        assert!(matches!(
            Trainer::new(2, 2, vec![], cfg.clone(), small_hyper(4)),
            Err(TrainError::EmptyTrainingSet)
        ));
        assert!(matches!(
            Trainer::new(2, 2, vec![(5, 0)], cfg.clone(), small_hyper(4)),
            Err(TrainError::PairOutOfRange { .. })
        ));
        let bad = Hyper {
            lr: 0.0,
            ..small_hyper(4)
        };
        assert!(matches!(
            Trainer::new(2, 2, vec![(0, 0)], cfg, bad),
            Err(TrainError::InvalidHyper(_))
        ));
    }

    #[test]
    fn default_lambda_schedule() {
        assert_eq!(Hyper::default_lambda_gor(1), 0.01);
        assert_eq!(Hyper::default_lambda_gor(2), 0.01);
        assert_eq!(Hyper::default_lambda_gor(5), 0.001);
    }
}
