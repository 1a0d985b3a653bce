//! Brute-force top-K retrieval and ranking metrics: AP@K, NDCG@K and the
//! mean-of-median popularity statistic (MMR), aggregated over CV folds.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{item_frequencies, FoldAssignment, InteractionSet, UserItemIndex};
use crate::geometry::dot;
use crate::model::UnitEmbeddings;

pub const DEFAULT_K: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no user has test items in fold {0}")]
    NoScorableUsers(usize),
    #[error("test fold {fold} out of range for {k} folds")]
    FoldOutOfRange { fold: usize, k: usize },
    #[error("model shape ({model_users} users, {model_items} items) does not match dataset ({data_users}, {data_items})")]
    ShapeMismatch {
        model_users: usize,
        model_items: usize,
        data_users: usize,
        data_items: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Descending score, then ascending item index.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// Top `k` items by `uᵀv` (equivalently by smallest `D²` on the sphere),
/// skipping items for which `exclude` returns true.
pub fn rank_top_k(
    units: &UnitEmbeddings,
    user: usize,
    k: usize,
    exclude: impl Fn(usize) -> bool,
) -> RankedList {
    let u = units.user(user);
    let mut scored: Vec<(f64, usize)> = (0..units.num_items)
        .filter(|&j| !exclude(j))
        .map(|j| (dot(u, units.item(j)), j))
        .collect();
    if scored.len() > k {
        scored.select_nth_unstable_by(k, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    RankedList {
        user,
        items: scored.iter().map(|&(_, j)| j).collect(),
        scores: scored.iter().map(|&(s, _)| s).collect(),
    }
}

/// `Σ_{i≤k} P@i · rel(i) / min(|truth|, k)`; `None` when `truth` is empty.
pub fn average_precision_at_k(ranked: &[usize], truth: &HashSet<usize>, k: usize) -> Option<f64> {
    if truth.is_empty() || k == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, item) in ranked.iter().take(k).enumerate() {
        if truth.contains(item) {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Some(sum / truth.len().min(k) as f64)
}

/// Binary-gain NDCG truncated at `k`; `None` when `truth` is empty.
pub fn ndcg_at_k(ranked: &[usize], truth: &HashSet<usize>, k: usize) -> Option<f64> {
    if truth.is_empty() || k == 0 {
        return None;
    }
    let discount = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| truth.contains(item))
        .map(|(i, _)| discount(i))
        .sum();
    let idcg: f64 = (0..truth.len().min(k)).map(discount).sum();
    Some(dcg / idcg)
}

/// Median of `f(j)` over one list; even lengths average the middle pair.
pub fn median_popularity(items: &[usize], item_freq: &[usize]) -> Option<f64> {
    if items.is_empty() {
        return None;
    }
    let mut f: Vec<usize> = items.iter().map(|&j| item_freq[j]).collect();
    f.sort_unstable();
    let mid = f.len() / 2;
    Some(if f.len() % 2 == 1 {
        f[mid] as f64
    } else {
        (f[mid - 1] + f[mid]) as f64 / 2.0
    })
}

/// Mean over lists of the median item popularity. Empty lists are skipped;
/// `None` if nothing is left.
pub fn mmr_stat<'a>(
    lists: impl IntoIterator<Item = &'a [usize]>,
    item_freq: &[usize],
) -> Option<f64> {
    let (sum, n) = lists
        .into_iter()
        .filter_map(|items| median_popularity(items, item_freq))
        .fold((0.0, 0usize), |(s, n), m| (s + m, n + 1));
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub map: f64,
    pub ndcg: f64,
    pub mmr: f64,
    pub users_scored: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub k: usize,
    pub exclude_train: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            exclude_train: true,
        }
    }
}

/// Scores every user with at least one pair in `test_fold`. Training pairs
/// are the other folds; their item frequencies feed the MMR statistic.
pub fn evaluate_fold(
    units: &UnitEmbeddings,
    set: &InteractionSet,
    folds: &FoldAssignment,
    test_fold: usize,
    opts: EvalOptions,
) -> Result<FoldMetrics, EvalError> {
    if units.num_users != set.num_users() || units.num_items != set.num_items() {
        return Err(EvalError::ShapeMismatch {
            model_users: units.num_users,
            model_items: units.num_items,
            data_users: set.num_users(),
            data_items: set.num_items(),
        });
    }
    if test_fold >= folds.k() {
        return Err(EvalError::FoldOutOfRange {
            fold: test_fold,
            k: folds.k(),
        });
    }
    let train = folds.train_pairs(set, test_fold);
    let test = folds.test_pairs(set, test_fold);
    let train_index = UserItemIndex::from_pairs(set.num_users(), &train);
    let test_index = UserItemIndex::from_pairs(set.num_users(), &test);
    let train_freq = item_frequencies(set.num_items(), &train);
    evaluate_users(
        units,
        &train_index,
        &test_index,
        &train_freq,
        test_fold,
        opts,
    )
}

/// Core of [`evaluate_fold`] on explicit train/test indexes.
pub fn evaluate_users(
    units: &UnitEmbeddings,
    train_index: &UserItemIndex,
    test_index: &UserItemIndex,
    train_freq: &[usize],
    fold: usize,
    opts: EvalOptions,
) -> Result<FoldMetrics, EvalError> {
    let per_user: Vec<(f64, f64, Vec<usize>)> = (0..units.num_users)
        .into_par_iter()
        .filter(|&u| test_index.degree(u) > 0)
        .map(|u| {
            let ranked = if opts.exclude_train {
                rank_top_k(units, u, opts.k, |j| train_index.contains(u, j))
            } else {
                rank_top_k(units, u, opts.k, |_| false)
            };
            let truth: HashSet<usize> = test_index.positives(u).iter().copied().collect();
            let ap =
                average_precision_at_k(&ranked.items, &truth, opts.k).expect("non-empty truth");
            let ndcg = ndcg_at_k(&ranked.items, &truth, opts.k).expect("non-empty truth");
            (ap, ndcg, ranked.items)
        })
        .collect();
    if per_user.is_empty() {
        return Err(EvalError::NoScorableUsers(fold));
    }
    let n = per_user.len() as f64;
    let map = per_user.iter().map(|r| r.0).sum::<f64>() / n;
    let ndcg = per_user.iter().map(|r| r.1).sum::<f64>() / n;
    let mmr = mmr_stat(per_user.iter().map(|r| r.2.as_slice()), train_freq).unwrap_or(0.0);
    Ok(FoldMetrics {
        fold,
        map,
        ndcg,
        mmr,
        users_scored: per_user.len(),
    })
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for a single value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Identifies the run a metrics row belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RunLabel {
    pub strategy: String,
    pub negatives: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub label: RunLabel,
    pub metrics: FoldMetrics,
}

/// Fold rows of one or more runs plus `mean±std` aggregates per run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub k: usize,
    pub rows: Vec<MetricsRow>,
}

pub const AGGREGATE_FOLD: &str = "mean±std";

impl MetricsReport {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            rows: Vec::new(),
        }
    }

    /// Adds a row, replacing an existing one for the same run and fold.
    pub fn upsert(&mut self, row: MetricsRow) {
        match self
            .rows
            .iter_mut()
            .find(|r| r.label == row.label && r.metrics.fold == row.metrics.fold)
        {
            Some(existing) => *existing = row,
            None => self.rows.push(row),
        }
    }

    pub fn labels(&self) -> Vec<RunLabel> {
        let mut labels: Vec<RunLabel> = Vec::new();
        for r in &self.rows {
            if !labels.contains(&r.label) {
                labels.push(r.label.clone());
            }
        }
        labels
    }

    /// `((map_mean, map_std), (ndcg_mean, ndcg_std), (mmr_mean, mmr_std))`.
    pub fn aggregate(&self, label: &RunLabel) -> [(f64, f64); 3] {
        let rows: Vec<&FoldMetrics> = self
            .rows
            .iter()
            .filter(|r| &r.label == label)
            .map(|r| &r.metrics)
            .collect();
        let col =
            |f: fn(&FoldMetrics) -> f64| mean_std(&rows.iter().map(|m| f(m)).collect::<Vec<_>>());
        [col(|m| m.map), col(|m| m.ndcg), col(|m| m.mmr)]
    }

    pub fn header(&self) -> String {
        format!(
            "strategy\tn_negatives\tbatch_size\tfold\tmap_at_{k}\tndcg_at_{k}\tmmr",
            k = self.k
        )
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header();
        out.push('\n');
        for label in self.labels() {
            let mut rows: Vec<&MetricsRow> =
                self.rows.iter().filter(|r| r.label == label).collect();
            rows.sort_by_key(|r| r.metrics.fold);
            for r in rows {
                let m = &r.metrics;
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.4}",
                    label.strategy, label.negatives, label.batch_size, m.fold, m.map, m.ndcg, m.mmr
                );
            }
            let [map, ndcg, mmr] = self.aggregate(&label);
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{:.6}±{:.6}\t{:.6}±{:.6}\t{:.4}±{:.4}",
                label.strategy,
                label.negatives,
                label.batch_size,
                AGGREGATE_FOLD,
                map.0,
                map.1,
                ndcg.0,
                ndcg.1,
                mmr.0,
                mmr.1
            );
        }
        out
    }

    /// Parses fold rows back; aggregate rows are recomputed, not read.
    pub fn from_tsv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty metrics file")?;
        let k = header
            .split('\t')
            .nth(4)
            .and_then(|c| c.strip_prefix("map_at_"))
            .and_then(|k| k.parse().ok())
            .ok_or("metrics header lacks a map_at_<k> column")?;
        let mut report = Self::new(k);
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 7 {
                return Err(format!("line {}: expected 7 columns", n + 2));
            }
            if cols[3] == AGGREGATE_FOLD {
                continue;
            }
            let bad = |what: &str| format!("line {}: bad {what}", n + 2);
            let label = RunLabel {
                strategy: cols[0].to_string(),
                negatives: cols[1].parse().map_err(|_| bad("n_negatives"))?,
                batch_size: cols[2].parse().map_err(|_| bad("batch_size"))?,
            };
            let metrics = FoldMetrics {
                fold: cols[3].parse().map_err(|_| bad("fold"))?,
                map: cols[4].parse().map_err(|_| bad("map"))?,
                ndcg: cols[5].parse().map_err(|_| bad("ndcg"))?,
                mmr: cols[6].parse().map_err(|_| bad("mmr"))?,
                users_scored: 0,
            };
            report.rows.push(MetricsRow { label, metrics });
        }
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(items: &[usize]) -> HashSet<usize> {
        items.iter().copied().collect()
    }

    /// Embeddings where user 0 scores item j as `scores[j]` exactly.
    fn scored_units(scores: &[f64]) -> UnitEmbeddings {
        let items = scores
            .iter()
            .flat_map(|&s| [s, (1.0 - s * s).sqrt()])
            .collect();
        UnitEmbeddings {
            num_users: 1,
            num_items: scores.len(),
            dim: 2,
            users: vec![1.0, 0.0],
            items,
        }
    }

    #[test]
    fn ranking_examples() {
        let units = scored_units(&[0.9, 0.1, 0.5]);
        let r = rank_top_k(&units, 0, 2, |_| false);
        assert_eq!(r.items, vec![0, 2]);
        let r = rank_top_k(&units, 0, 2, |j| j == 0);
        assert_eq!(r.items, vec![2, 1]);
        let r = rank_top_k(&units, 0, 10, |j| j == 0);
        assert_eq!(r.items.len(), 2);
    }

    #[test]
    fn ties_break_by_index() {
        let units = scored_units(&[0.5, 0.7, 0.5, 0.5]);
        let r = rank_top_k(&units, 0, 3, |_| false);
        assert_eq!(r.items, vec![1, 0, 2]);
    }

    #[test]
    fn average_precision_examples() {
        assert_eq!(average_precision_at_k(&[0, 1], &truth(&[0]), 50), Some(1.0));
        assert_eq!(average_precision_at_k(&[1, 0], &truth(&[0]), 50), Some(0.5));
        let ap = average_precision_at_k(&[0, 1, 2], &truth(&[0, 2]), 50).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision_at_k(&[0], &truth(&[]), 50), None);
    }

    #[test]
    fn ap_normalizes_by_k_when_truth_is_larger() {
        let ranked: Vec<usize> = (0..3).collect();
        let t = truth(&(0..10).collect::<Vec<_>>());
        assert_eq!(average_precision_at_k(&ranked, &t, 3), Some(1.0));
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_k(&[7, 1], &truth(&[7]), 50), Some(1.0));
        let v = ndcg_at_k(&[1, 7], &truth(&[7]), 50).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&[1, 2], &truth(&[7]), 50), Some(0.0));
        assert_eq!(ndcg_at_k(&[1, 7], &truth(&[7]), 1), Some(0.0));
    }

    #[test]
    fn mmr_examples() {
        let freq = [1, 2, 3, 10, 4];
        assert_eq!(mmr_stat([&[0usize, 1, 2][..]], &freq), Some(2.0));
        assert_eq!(mmr_stat([&[0usize, 1, 2, 3][..]], &freq), Some(2.5));
        // medians 2 and 4
        assert_eq!(
            mmr_stat([&[0usize, 1, 2][..], &[4, 3, 2][..]], &freq),
            Some(3.0)
        );
        assert_eq!(mmr_stat(std::iter::empty::<&[usize]>(), &freq), None);
    }

    #[test]
    fn mean_std_uses_sample_deviation() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
    }

    #[test]
    fn perfect_model_scores_one() {
        // user u likes items 2u, 2u+1; each user's vector equals its items'.
        let set = InteractionSet::from_pairs(2, 4, [(0, 0), (0, 1), (1, 2), (1, 3)]);
        let folds = FoldAssignment::new(2, vec![0, 1, 0, 1]).unwrap();
        let units = UnitEmbeddings {
            num_users: 2,
            num_items: 4,
            dim: 2,
            users: vec![1.0, 0.0, 0.0, 1.0],
            items: vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0],
        };
        let m = evaluate_fold(&units, &set, &folds, 1, EvalOptions::default()).unwrap();
        assert_eq!((m.map, m.ndcg, m.users_scored), (1.0, 1.0, 2));
        // each list is [test item (f=0), other user's train item (f=1), other test item (f=0)]
        assert_eq!(m.mmr, 0.0);
    }

    #[test]
    fn identical_embeddings_fall_back_to_index_order() {
        let set = InteractionSet::from_pairs(1, 6, [(0, 1), (0, 4)]);
        let folds = FoldAssignment::new(2, vec![0, 1]).unwrap();
        let units = UnitEmbeddings {
            num_users: 1,
            num_items: 6,
            dim: 2,
            users: vec![1.0, 0.0],
            items: [1.0, 0.0].repeat(6),
        };
        let m = evaluate_fold(&units, &set, &folds, 0, EvalOptions::default()).unwrap();
        // train item 4 excluded; index order [0,1,2,3,5] puts test item 1 at rank 2
        assert!((m.ndcg - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((m.map - 0.5).abs() < 1e-12);
    }

    #[test]
    fn evaluate_errors() {
        let set = InteractionSet::from_pairs(1, 2, [(0, 0), (0, 1)]);
        let folds = FoldAssignment::new(3, vec![0, 1]).unwrap();
        let units = UnitEmbeddings {
            num_users: 1,
            num_items: 2,
            dim: 1,
            users: vec![1.0],
            items: vec![1.0, 1.0],
        };
        assert_eq!(
            evaluate_fold(&units, &set, &folds, 2, EvalOptions::default()),
            Err(EvalError::NoScorableUsers(2))
        );
        assert!(matches!(
            evaluate_fold(&units, &set, &folds, 5, EvalOptions::default()),
            Err(EvalError::FoldOutOfRange { .. })
        ));
        let wrong = UnitEmbeddings {
            num_items: 3,
            items: vec![1.0; 3],
            ..units
        };
        assert!(matches!(
            evaluate_fold(&wrong, &set, &folds, 0, EvalOptions::default()),
            Err(EvalError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn report_tsv_round_trip() {
        let mut report = MetricsReport::new(50);
        for fold in 0..4 {
            report.upsert(MetricsRow {
                label: RunLabel {
                    strategy: "two_stage".into(),
                    negatives: 5,
                    batch_size: 256,
                },
                metrics: FoldMetrics {
                    fold,
                    map: 0.02 + fold as f64 * 0.001,
                    ndcg: 0.08,
                    mmr: 19.5,
                    users_scored: 0,
                },
            });
        }
        let text = report.to_tsv();
        assert!(text
            .starts_with("strategy\tn_negatives\tbatch_size\tfold\tmap_at_50\tndcg_at_50\tmmr\n"));
        assert!(text.lines().last().unwrap().contains("\tmean±std\t"));
        let back = MetricsReport::from_tsv(&text).unwrap();
        assert_eq!(back.rows.len(), 4);
        assert_eq!(back.to_tsv(), text);
    }
}
