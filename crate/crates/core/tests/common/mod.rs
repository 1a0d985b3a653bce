#![allow(dead_code)]

use cml::dataset::{kfold_split, FoldAssignment, InteractionSet};
use cml::eval::{evaluate_fold, EvalOptions, FoldMetrics};
use cml::model::{Hyper, ModelParams, Trainer};
use cml::samplers::{SamplerConfig, Strategy};

pub fn sampler(strategy: Strategy, negatives: usize, candidates: usize) -> SamplerConfig {
    SamplerConfig {
        strategy,
        negatives,
        candidates,
        ..SamplerConfig::default()
    }
}

pub fn split(set: &InteractionSet, seed: u64) -> FoldAssignment {
    kfold_split(set, 4, seed).expect("valid split")
}

/// Trains on every fold but `test_fold` and scores `test_fold`.
pub fn train_and_score(
    set: &InteractionSet,
    folds: &FoldAssignment,
    test_fold: usize,
    sampler: SamplerConfig,
    hyper: Hyper,
    k: usize,
) -> (FoldMetrics, Vec<f64>) {
    let train = folds.train_pairs(set, test_fold);
    let mut trainer = Trainer::new(set.num_users(), set.num_items(), train, sampler, hyper)
        .expect("valid trainer");
    let losses = trainer
        .fit(|_| {})
        .expect("training runs")
        .into_iter()
        .map(|s| s.mean_loss)
        .collect();
    let metrics = evaluate_fold(
        &trainer.params().unit_embeddings(),
        set,
        folds,
        test_fold,
        EvalOptions {
            k,
            exclude_train: true,
        },
    )
    .expect("scorable fold");
    (metrics, losses)
}

/// Mean metrics of untrained random embeddings over `seeds` initializations.
pub fn random_baseline(
    set: &InteractionSet,
    folds: &FoldAssignment,
    test_fold: usize,
    dim: usize,
    k: usize,
    seeds: u64,
) -> FoldMetrics {
    let mut acc = FoldMetrics {
        fold: test_fold,
        map: 0.0,
        ndcg: 0.0,
        mmr: 0.0,
        users_scored: 0,
    };
    for seed in 0..seeds {
        let params = ModelParams::init(set.num_users(), set.num_items(), dim, 1_000 + seed);
        let m = evaluate_fold(
            &params.unit_embeddings(),
            set,
            folds,
            test_fold,
            EvalOptions {
                k,
                exclude_train: true,
            },
        )
        .expect("scorable fold");
        acc.map += m.map / seeds as f64;
        acc.ndcg += m.ndcg / seeds as f64;
        acc.mmr += m.mmr / seeds as f64;
        acc.users_scored = m.users_scored;
    }
    acc
}

/// One `criterion N ... PASS|FAIL` line, then the assertion.
pub fn report(id: &str, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {id} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {id} {name} failed: {detail}");
}
