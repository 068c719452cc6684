//! Deterministic reductions over path arrays.
//!
//! Sums are taken over fixed-size chunks whose partial results are combined
//! in index order, so results do not depend on the rayon thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const CHUNK: usize = 8192;

pub fn sum(xs: &[f64]) -> f64 {
    xs.par_chunks(CHUNK)
        .map(|c| c.iter().sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum()
}

pub fn mean(xs: &[f64]) -> f64 {
    sum(xs) / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let ss = xs
        .par_chunks(CHUNK)
        .map(|c| c.iter().map(|x| (x - m) * (x - m)).sum::<f64>())
        .collect::<Vec<_>>()
        .into_iter()
        .sum::<f64>();
    ss / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Self-normalized weighted mean `sum(w p) / sum(w)` and its delta-method
/// standard error.
pub fn weighted_mean(weights: &[f64], payload: &[f64]) -> (f64, f64) {
    let sw = sum(weights);
    let est = dot(weights, payload) / sw;
    let n = weights.len() as f64;
    let wbar = sw / n;
    let centred: Vec<f64> = weights.iter().zip(payload).map(|(w, p)| w * (p - est) / wbar).collect();
    (est, std_error(&centred))
}

/// A Monte Carlo estimate: per-path values of a conditional quantity (all
/// equal at the initial node) and the standard error of the time-zero value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub values: Vec<f64>,
    pub std_error: f64,
}

impl Estimate {
    pub fn constant(value: f64, paths: usize, std_error: f64) -> Self {
        Self {
            values: vec![value; paths],
            std_error,
        }
    }

    /// Value at the first path; the scalar estimate when conditioning on the
    /// trivial sigma-algebra.
    pub fn scalar(&self) -> f64 {
        self.values[0]
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }
}
