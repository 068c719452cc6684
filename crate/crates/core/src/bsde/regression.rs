//! Least-squares conditional expectations on polynomial bases of the state.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::PathBundle;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionConfig {
    /// Degree of the polynomial basis in the state.
    pub degree: usize,
    /// Ridge penalty on the non-intercept coefficients of the standardized basis.
    pub ridge: f64,
    /// Add the cumulative jump counts of each mark as linear features.
    pub jump_count_features: bool,
    /// Clamp applied to the Brownian control before evaluating the generator.
    pub z_max: f64,
    /// Clamp applied to each jump control before evaluating the generator.
    pub jump_max: f64,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            ridge: 1e-8,
            jump_count_features: false,
            z_max: 10.0,
            jump_max: 5.0,
        }
    }
}

impl RegressionConfig {
    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    pub fn with_ridge(mut self, ridge: f64) -> Self {
        self.ridge = ridge;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "ridge penalty must be >= 0, got {}",
                self.ridge
            )));
        }
        if !(self.z_max > 0.0 && self.jump_max > 0.0) {
            return Err(Error::InvalidArgument("control clamps must be positive".into()));
        }
        Ok(())
    }
}

/// Standardize a column; `None` when it is numerically constant.
fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let mean = stats::mean(x);
    let sd = stats::variance(x).sqrt();
    if sd.is_nan() || sd <= 1e-12 * mean.abs().max(1.0) {
        return None;
    }
    Some(x.iter().map(|v| (v - mean) / sd).collect())
}

/// Intercept, powers `1..=degree` of the standardized first variable and the
/// standardized remaining variables. Constant variables contribute nothing.
pub fn polynomial_basis(state: &[f64], degree: usize, extra: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut cols = vec![vec![1.0; state.len()]];
    if degree > 0 {
        if let Some(u) = standardize(state) {
            let mut pow = u.clone();
            cols.push(u.clone());
            for _ in 1..degree {
                pow = pow.iter().zip(&u).map(|(p, q)| p * q).collect();
                cols.push(pow.clone());
            }
        }
    }
    for e in extra {
        if let Some(u) = standardize(e) {
            cols.push(u);
        }
    }
    cols
}

/// Orthogonal projection onto the span of a fixed design, reusable across
/// several target vectors. Column 0 is the intercept and is not penalized.
#[derive(Debug, Clone)]
pub struct Projector {
    columns: Vec<Vec<f64>>,
    gram_inv: Option<DMatrix<f64>>,
    paths: usize,
    condition: f64,
}

impl Projector {
    /// Plain averaging, for the trivial sigma-algebra at time zero.
    pub fn intercept_only(paths: usize) -> Self {
        Self {
            columns: Vec::new(),
            gram_inv: None,
            paths,
            condition: 1.0,
        }
    }

    pub fn new(columns: Vec<Vec<f64>>, ridge: f64, step: Option<usize>) -> Result<Self> {
        let p = columns.len();
        let paths = columns.first().map_or(0, Vec::len);
        if p <= 1 {
            return Ok(Self::intercept_only(paths));
        }
        if paths <= p {
            return Err(Error::SolverFailure {
                step,
                reason: format!("{paths} samples for {p} regressors"),
            });
        }
        let n = paths as f64;
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let v = stats::dot(&columns[a], &columns[b]) / n;
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        for a in 1..p {
            gram[(a, a)] += ridge;
        }
        let eig = gram.clone().symmetric_eigen().eigenvalues;
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(max.is_finite() && min.is_finite()) {
            return Err(Error::SolverFailure {
                step,
                reason: "non-finite regression design".into(),
            });
        }
        if ridge == 0.0 && min <= 1e-12 * max {
            return Err(Error::SolverFailure {
                step,
                reason: format!("rank-deficient design (condition {condition:.3e})"),
            });
        }
        let chol = gram.cholesky().ok_or_else(|| Error::SolverFailure {
            step,
            reason: format!("regression matrix is singular (condition {condition:.3e})"),
        })?;
        Ok(Self {
            columns,
            gram_inv: Some(chol.inverse()),
            paths,
            condition,
        })
    }

    /// Projector on the regression basis of `X(t_node)`.
    pub fn at_node(bundle: &PathBundle, node: usize, cfg: &RegressionConfig) -> Result<Self> {
        if node == 0 {
            return Ok(Self::intercept_only(bundle.paths()));
        }
        let extra: Vec<Vec<f64>> = if cfg.jump_count_features {
            (0..bundle.mark_count())
                .map(|k| bundle.jump_count_at(node, k))
                .collect()
        } else {
            Vec::new()
        };
        let cols = polynomial_basis(bundle.state(node), cfg.degree, &extra);
        Self::new(cols, cfg.ridge, Some(node))
    }

    pub fn dim(&self) -> usize {
        self.columns.len().max(1)
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn coefficients(&self, targets: &[f64]) -> Vec<f64> {
        match &self.gram_inv {
            None => vec![stats::mean(targets)],
            Some(inv) => {
                let n = self.paths as f64;
                let rhs = DVector::from_iterator(
                    self.columns.len(),
                    self.columns.iter().map(|c| stats::dot(c, targets) / n),
                );
                (inv * rhs).iter().copied().collect()
            }
        }
    }

    /// Fitted conditional expectation at every path.
    pub fn fit(&self, targets: &[f64]) -> Vec<f64> {
        debug_assert_eq!(targets.len(), self.paths);
        if let Some(&c) = targets.first() {
            if targets.iter().all(|&v| v == c) {
                return vec![c; self.paths];
            }
        }
        let coef = self.coefficients(targets);
        if self.gram_inv.is_none() {
            return vec![coef[0]; self.paths];
        }
        let mut out = vec![coef[0]; self.paths];
        for (c, col) in coef.iter().zip(&self.columns).skip(1) {
            for (o, v) in out.iter_mut().zip(col) {
                *o += c * v;
            }
        }
        out
    }
}

/// Projection `m = P xi` and tilt weights `exp(-k (xi - m))`.
///
/// Conditional expectations of `exp(-k xi)` are estimated as
/// `exp(-k m) P[exp(-k (xi - m))]`; the tilt is nearly flat in the state
/// when `xi` is, so its fit stays positive where a polynomial fit of the
/// raw exponential would not.
pub(crate) fn centred_tilt(proj: &Projector, xi: &[f64], k: f64) -> (Vec<f64>, Vec<f64>) {
    let m = proj.fit(xi);
    let w = xi.iter().zip(&m).map(|(x, c)| (-k * (x - c)).exp()).collect();
    (m, w)
}

/// Least-squares projection of `targets` on the basis generated by the
/// feature columns (intercept, polynomial in the first feature up to
/// `cfg.degree`, linear in the rest).
pub fn regress_condexp(features: &[Vec<f64>], targets: &[f64], cfg: &RegressionConfig) -> Result<Vec<f64>> {
    let Some((first, rest)) = features.split_first() else {
        return Ok(vec![stats::mean(targets); targets.len()]);
    };
    if first.len() != targets.len() || rest.iter().any(|c| c.len() != targets.len()) {
        return Err(Error::InvalidArgument("feature and target lengths differ".into()));
    }
    let cols = polynomial_basis(first, cfg.degree, rest);
    let proj = Projector::new(cols, cfg.ridge, None)?;
    let fitted = proj.fit(targets);
    if fitted.iter().any(|v| !v.is_finite()) {
        return Err(Error::SolverFailure {
            step: None,
            reason: "non-finite fitted values".into(),
        });
    }
    Ok(fitted)
}
