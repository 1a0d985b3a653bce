//! Unit-sphere math: the dot-product density of two independent uniform unit
//! vectors, L2 normalization and the Jacobian-transpose of normalization.
//!
//! For `p1`, `p2` drawn uniformly from the unit sphere in `R^d`, the inner
//! product `s = p1ᵀp2` has density
//!
//! ```text
//! p(s) = (1 - s²)^((d-1)/2 - 1) / Beta((d-1)/2, 1/2)   for -1 <= s <= 1
//!      = 0                                             otherwise
//! ```
//!
//! with `E[s] = 0` and `E[s²] = 1/d`. The density is evaluated in log space,
//! which matters at `d = 128` where `(1 - s²)^62.5` underflows quickly.

use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Floor applied to the norm before dividing in [`normalize`].
pub const NORM_EPS: f64 = 1e-12;

/// Below this norm [`normalize_backward`] returns a zero gradient.
pub const BACKWARD_MIN_NORM: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("log_beta requires positive arguments, got a={a}, b={b}")]
    NonPositiveBetaArgument { a: f64, b: f64 },
    #[error("sphere density requires dimension >= 2, got {0}")]
    DimensionTooSmall(usize),
}

/// `log Beta(a, b) = lnΓ(a) + lnΓ(b) - lnΓ(a + b)`.
pub fn log_beta(a: f64, b: f64) -> Result<f64, GeometryError> {
    if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() {
        return Err(GeometryError::NonPositiveBetaArgument { a, b });
    }
    Ok(libm::lgamma(a) + libm::lgamma(b) - libm::lgamma(a + b))
}

/// Density of the dot product of two independent uniform unit vectors in
/// dimension `dim`, with its normalizing constant cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereDensity {
    dim: usize,
    exponent: f64,
    log_norm: f64,
}

impl SphereDensity {
    pub fn new(dim: usize) -> Result<Self, GeometryError> {
        if dim < 2 {
            return Err(GeometryError::DimensionTooSmall(dim));
        }
        let half = (dim as f64 - 1.0) / 2.0;
        Ok(Self {
            dim,
            exponent: half - 1.0,
            log_norm: log_beta(half, 0.5)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `log Beta((d-1)/2, 1/2)`.
    pub fn log_norm(&self) -> f64 {
        self.log_norm
    }

    /// Natural log of the density. `-inf` outside `[-1, 1]`; `+inf` at the
    /// endpoints for `d = 2`, where the density has an integrable singularity.
    pub fn log_density(&self, s: f64) -> f64 {
        if !(-1.0..=1.0).contains(&s) {
            return f64::NEG_INFINITY;
        }
        if self.exponent == 0.0 {
            return -self.log_norm;
        }
        let one_minus_sq = (1.0 - s) * (1.0 + s);
        if one_minus_sq <= 0.0 {
            return if self.exponent > 0.0 {
                f64::NEG_INFINITY
            } else {
                f64::INFINITY
            };
        }
        self.exponent * one_minus_sq.ln() - self.log_norm
    }

    pub fn density(&self, s: f64) -> f64 {
        self.log_density(s).exp()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// `x / max(‖x‖, NORM_EPS)`. Near-zero inputs come back as a scaled copy
/// rather than a unit vector.
pub fn normalize(x: &[f64]) -> Vec<f64> {
    let mut out = x.to_vec();
    normalize_in_place(&mut out);
    out
}

pub fn normalize_in_place(x: &mut [f64]) {
    let scale = 1.0 / norm(x).max(NORM_EPS);
    x.iter_mut().for_each(|v| *v *= scale);
}

/// Writes the normalized copy of `x` into `out`.
pub fn normalize_into(x: &[f64], out: &mut [f64]) {
    out.copy_from_slice(x);
    normalize_in_place(out);
}

/// Pulls an upstream gradient `g` (taken with respect to `x / ‖x‖`) back to
/// `x`: `(g - (x̂·g) x̂) / ‖x‖`.
///
/// Returns zeros when `‖x‖ < BACKWARD_MIN_NORM`.
pub fn normalize_backward(x: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    normalize_backward_into(x, g, &mut out);
    out
}

pub fn normalize_backward_into(x: &[f64], g: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), g.len());
    let n = norm(x);
    if n < BACKWARD_MIN_NORM {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let inv = 1.0 / n;
    let radial = dot(x, g) * inv;
    for ((o, &xi), &gi) in out.iter_mut().zip(x).zip(g) {
        *o = (gi - radial * xi * inv) * inv;
    }
}

/// Uniform draw from the unit sphere: i.i.d. standard normals, normalized.
pub fn random_unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        if norm(&v) > 1e-300 {
            normalize_in_place(&mut v);
            return v;
        }
    }
}
