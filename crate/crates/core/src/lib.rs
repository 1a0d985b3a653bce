//! Collaborative metric learning for implicit feedback.
//!
//! Users and items live on the unit sphere in `R^d`; a triplet hinge loss with
//! a global orthogonal regularizer pulls each user toward the items they
//! interacted with. Negatives come from one of three samplers: uniform,
//! popularity-smoothed (`f(j)^β`), or two-stage (a popularity-weighted
//! candidate pool re-weighted by the inverse dot-product density against the
//! positive item). Evaluation is brute-force top-K with MAP, NDCG and a
//! popularity-bias statistic over k-fold splits.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod persist;
pub mod samplers;
pub mod synthetic;
