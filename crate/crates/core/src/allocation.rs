//! Dynamic capital allocation: finite-difference gradients, the
//! measure-change representation, Aumann-Shapley averages along the scaling
//! path, and the convex and coherent density representations of the risk.

use serde::{Deserialize, Serialize};

use crate::bsde::RegressionConfig;
use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::market::PathBundle;
use crate::measure::{doleans_dade, reweight, reweighted_with_influence, Integrands, RnProcess};
use crate::payoff::Payoff;
use crate::risk::RiskEngine;
use crate::stats::{self, Estimate};

/// Gauss-Legendre rule mapped to the open interval `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Quadrature {
    pub fn gauss_legendre(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("quadrature needs at least one node".into()));
        }
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                // Legendre recurrence for P_n and its derivative at x
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 1 { x } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
                let step = pn / dp;
                x -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            nodes.push(0.5 * (1.0 + x));
            weights.push(1.0 / ((1.0 - x * x) * dp * dp));
        }
        nodes.reverse();
        weights.reverse();
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Per-path values at the allocation node plus influence samples of the
/// time-zero value.
#[derive(Debug, Clone)]
struct Sensitivity {
    values: Vec<f64>,
    influence: Vec<f64>,
}

impl Sensitivity {
    fn zeros(m: usize) -> Self {
        Self {
            values: vec![0.0; m],
            influence: vec![0.0; m],
        }
    }

    fn add_scaled(&mut self, w: f64, other: &Sensitivity) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += w * b;
        }
        for (a, b) in self.influence.iter_mut().zip(&other.influence) {
            *a += w * b;
        }
    }

    fn estimate(self) -> Estimate {
        Estimate {
            std_error: stats::std_error(&self.influence),
            values: self.values,
        }
    }
}

/// `0.05 (1 + max |xi|)` over the simulated paths.
pub fn default_fd_step(xi: &[f64]) -> f64 {
    0.05 * (1.0 + xi.iter().fold(0.0_f64, |a, v| a.max(v.abs())))
}

fn fd_sensitivity(engine: &RiskEngine<'_>, xi: &[f64], eta: &[f64], h: f64, node: usize) -> Result<Sensitivity> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    let plus: Vec<f64> = xi.iter().zip(eta).map(|(x, e)| x + h * e).collect();
    let minus: Vec<f64> = xi.iter().zip(eta).map(|(x, e)| x - h * e).collect();
    let (rp, rm) = (engine.evaluate(&plus, node)?, engine.evaluate(&minus, node)?);
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) / (2.0 * h)).collect();
    Ok(Sensitivity {
        values: diff(&rp.values, &rm.values),
        influence: diff(&rp.influence, &rm.influence),
    })
}

/// Central difference `[rho_t(xi + h eta) - rho_t(xi - h eta)] / 2h` under
/// common random numbers; `h` defaults to [`default_fd_step`].
pub fn gradient_fd(
    engine: &RiskEngine<'_>,
    xi: &Payoff,
    eta: &Payoff,
    h: Option<f64>,
    node: usize,
) -> Result<Estimate> {
    let b = engine.bundle();
    let xv = b.terminal_values(xi);
    let h = h.unwrap_or_else(|| default_fd_step(&xv));
    Ok(fd_sensitivity(engine, &xv, &b.terminal_values(eta), h, node)?.estimate())
}

/// The measure `Q` whose density is the stochastic exponential of the
/// generator gradients along the solution with terminal `-xi`.
#[derive(Debug, Clone)]
pub struct GradientMeasure<'a> {
    bundle: &'a PathBundle,
    cfg: RegressionConfig,
    rn: RnProcess,
}

impl<'a> GradientMeasure<'a> {
    pub fn new(bundle: &'a PathBundle, driver: &Driver, xi: &[f64], cfg: &RegressionConfig) -> Result<Self> {
        let engine = RiskEngine::new(bundle, driver.clone(), *cfg);
        let sol = engine.solve(xi)?;
        let integrands = Integrands::from_driver(driver, &sol)?;
        if let Some((f, step, mark, path)) = integrands.worst_jump_factor() {
            if f <= 0.0 {
                return Err(Error::SignedDensity {
                    step,
                    mark,
                    path,
                    factor: f,
                });
            }
        }
        let rn = doleans_dade(bundle, &integrands)?;
        Ok(Self { bundle, cfg: *cfg, rn })
    }

    pub fn density(&self) -> &RnProcess {
        &self.rn
    }

    fn sensitivity(&self, eta: &[f64], node: usize) -> Result<Sensitivity> {
        let neg: Vec<f64> = eta.iter().map(|v| -v).collect();
        let (values, influence) = reweighted_with_influence(&self.rn, self.bundle, &neg, node, &self.cfg)?;
        Ok(Sensitivity { values, influence })
    }

    /// `E^Q[-eta | X(t)]`
    pub fn allocation(&self, eta: &[f64], node: usize) -> Result<Estimate> {
        Ok(self.sensitivity(eta, node)?.estimate())
    }
}

pub fn gradient_measure(
    bundle: &PathBundle,
    driver: &Driver,
    xi: &Payoff,
    eta: &Payoff,
    node: usize,
    cfg: &RegressionConfig,
) -> Result<Estimate> {
    let q = GradientMeasure::new(bundle, driver, &bundle.terminal_values(xi), cfg)?;
    q.allocation(&bundle.terminal_values(eta), node)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMethod {
    FiniteDifference,
    MeasureChange,
}

/// `sum_j w_j grad_eta rho_t(beta_j xi)` for every direction at once.
pub fn aumann_shapley_all(
    engine: &RiskEngine<'_>,
    xi: &Payoff,
    etas: &[Payoff],
    quad: &Quadrature,
    inner: InnerMethod,
    h: Option<f64>,
    node: usize,
) -> Result<Vec<Estimate>> {
    let b = engine.bundle();
    let xv = b.terminal_values(xi);
    let evs: Vec<Vec<f64>> = etas.iter().map(|e| b.terminal_values(e)).collect();
    let h = h.unwrap_or_else(|| default_fd_step(&xv));
    let mut acc: Vec<Sensitivity> = (0..etas.len()).map(|_| Sensitivity::zeros(b.paths())).collect();
    for (&beta, &w) in quad.nodes().iter().zip(quad.weights()) {
        let scaled: Vec<f64> = xv.iter().map(|v| beta * v).collect();
        match inner {
            InnerMethod::FiniteDifference => {
                for (a, ev) in acc.iter_mut().zip(&evs) {
                    a.add_scaled(w, &fd_sensitivity(engine, &scaled, ev, h, node)?);
                }
            }
            InnerMethod::MeasureChange => {
                let q = GradientMeasure::new(b, engine.driver(), &scaled, engine.config())?;
                for (a, ev) in acc.iter_mut().zip(&evs) {
                    a.add_scaled(w, &q.sensitivity(ev, node)?);
                }
            }
        }
    }
    Ok(acc.into_iter().map(Sensitivity::estimate).collect())
}

pub fn aumann_shapley(
    engine: &RiskEngine<'_>,
    xi: &Payoff,
    eta: &Payoff,
    quad: &Quadrature,
    inner: InnerMethod,
    node: usize,
) -> Result<Estimate> {
    let mut v = aumann_shapley_all(engine, xi, std::slice::from_ref(eta), quad, inner, None, node)?;
    Ok(v.remove(0))
}

/// `E[-Lambda(T, t) xi | X(t)]` with `Lambda(T, t)` the quadrature average of
/// the density ratios of the scaled problems, self-normalized.
pub fn convex_representation(
    bundle: &PathBundle,
    driver: &Driver,
    xi: &Payoff,
    quad: &Quadrature,
    node: usize,
    cfg: &RegressionConfig,
) -> Result<Estimate> {
    let xv = bundle.terminal_values(xi);
    let m = bundle.paths();
    let (mut mix_t, mut mix_0) = (vec![0.0; m], vec![0.0; m]);
    for (&beta, &w) in quad.nodes().iter().zip(quad.weights()) {
        let scaled: Vec<f64> = xv.iter().map(|v| beta * v).collect();
        let q = GradientMeasure::new(bundle, driver, &scaled, cfg)?;
        let rn = q.density();
        for (a, r) in mix_t.iter_mut().zip(rn.ratio(node)) {
            *a += w * r;
        }
        for (a, r) in mix_0.iter_mut().zip(rn.terminal()) {
            *a += w * r;
        }
    }
    let neg: Vec<f64> = xv.iter().map(|v| -v).collect();
    let (values, influence) = reweight(bundle, &mix_t, &mix_0, &neg, node, cfg)?;
    Ok(Sensitivity { values, influence }.estimate())
}

/// Single density from the unscaled problem; valid for positively
/// homogeneous generators only.
pub fn coherent_representation(
    bundle: &PathBundle,
    driver: &Driver,
    xi: &Payoff,
    node: usize,
    cfg: &RegressionConfig,
) -> Result<Estimate> {
    if !driver.positively_homogeneous() {
        return Err(Error::Misuse(
            "coherent representation needs a positively homogeneous generator".into(),
        ));
    }
    let xv = bundle.terminal_values(xi);
    GradientMeasure::new(bundle, driver, &xv, cfg)?.allocation(&xv, node)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scalar {
    pub value: f64,
    pub std_error: f64,
}

impl From<&Estimate> for Scalar {
    fn from(e: &Estimate) -> Self {
        Self {
            value: e.scalar(),
            std_error: e.std_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationRow {
    pub label: String,
    pub fd: Scalar,
    pub measure: Scalar,
    pub aumann_shapley: Scalar,
    /// `|fd - measure|`
    pub fd_measure_gap: f64,
    /// Standard error of the path-wise difference of the two estimators.
    pub fd_measure_se: f64,
    pub as_gradient_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationMeta {
    pub h: f64,
    pub quadrature_nodes: usize,
    pub inner: InnerMethod,
    pub seed: u64,
    pub paths: usize,
    pub steps: usize,
}

/// Time-zero allocations of a decomposed position by the three methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationReport {
    pub rho: Scalar,
    pub rows: Vec<AllocationRow>,
    pub meta: AllocationMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMethod {
    FiniteDifference,
    MeasureChange,
    AumannShapley,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FullAllocation {
    pub residual: f64,
    pub pooled_se: f64,
    pub pass: bool,
}

/// `rho - sum_i alloc_i` with standard errors pooled in quadrature.
pub fn full_allocation_check(allocations: &[Scalar], rho: Scalar, tolerance: f64) -> FullAllocation {
    let total: f64 = allocations.iter().map(|a| a.value).sum();
    let var: f64 = allocations.iter().map(|a| a.std_error * a.std_error).sum::<f64>() + rho.std_error * rho.std_error;
    let residual = rho.value - total;
    FullAllocation {
        residual,
        pooled_se: var.sqrt(),
        pass: residual.abs() <= tolerance,
    }
}

impl AllocationReport {
    pub fn column(&self, method: AllocationMethod) -> Vec<Scalar> {
        self.rows
            .iter()
            .map(|r| match method {
                AllocationMethod::FiniteDifference => r.fd,
                AllocationMethod::MeasureChange => r.measure,
                AllocationMethod::AumannShapley => r.aumann_shapley,
            })
            .collect()
    }

    pub fn full_allocation_check(&self, method: AllocationMethod, tolerance: f64) -> FullAllocation {
        full_allocation_check(&self.column(method), self.rho, tolerance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AllocationOptions {
    pub h: Option<f64>,
    pub quadrature_nodes: usize,
    pub inner: InnerMethod,
}

impl Default for AllocationOptions {
    fn default() -> Self {
        Self {
            h: None,
            quadrature_nodes: 16,
            inner: InnerMethod::MeasureChange,
        }
    }
}

/// Allocations of `xi` over its decomposition (or over `xi` itself when it
/// has none) by finite differences, measure change and Aumann-Shapley.
pub fn allocate(engine: &RiskEngine<'_>, xi: &Payoff, opts: &AllocationOptions) -> Result<AllocationReport> {
    xi.validate()?;
    let b = engine.bundle();
    let parts: Vec<Payoff> = match xi.decomposition() {
        Some(p) => p.to_vec(),
        None => vec![xi.clone()],
    };
    let xv = b.terminal_values(xi);
    let h = opts.h.unwrap_or_else(|| default_fd_step(&xv));
    let rho = engine.evaluate(&xv, 0)?;
    let q = GradientMeasure::new(b, engine.driver(), &xv, engine.config())?;
    let quad = Quadrature::gauss_legendre(opts.quadrature_nodes)?;
    let as_all = aumann_shapley_all(engine, xi, &parts, &quad, opts.inner, Some(h), 0)?;
    let mut rows = Vec::with_capacity(parts.len());
    for (i, (part, a)) in parts.iter().zip(&as_all).enumerate() {
        let ev = b.terminal_values(part);
        let fd = fd_sensitivity(engine, &xv, &ev, h, 0)?;
        let ms = q.sensitivity(&ev, 0)?;
        let d: Vec<f64> = fd.influence.iter().zip(&ms.influence).map(|(p, q)| p - q).collect();
        let (fd, ms) = (fd.estimate(), ms.estimate());
        rows.push(AllocationRow {
            label: format!("eta_{}", i + 1),
            fd_measure_gap: (fd.scalar() - ms.scalar()).abs(),
            fd_measure_se: stats::std_error(&d),
            as_gradient_gap: (a.scalar() - fd.scalar()).abs(),
            fd: Scalar::from(&fd),
            measure: Scalar::from(&ms),
            aumann_shapley: Scalar::from(a),
        });
    }
    Ok(AllocationReport {
        rho: Scalar {
            value: rho.scalar(),
            std_error: rho.std_error(),
        },
        rows,
        meta: AllocationMeta {
            h,
            quadrature_nodes: opts.quadrature_nodes,
            inner: opts.inner,
            seed: b.seed(),
            paths: b.paths(),
            steps: b.steps(),
        },
    })
}
