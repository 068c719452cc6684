//! Stochastic exponentials of jump-diffusion integrands, density processes
//! and reweighted expectations.

use serde::{Deserialize, Serialize};

use crate::bsde::{BsdeSolution, Projector, RegressionConfig};
use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::market::PathBundle;
use crate::stats::{self, Estimate};

/// Integrands `phi_z(t_i)` and `phi_k(t_i)` of the local martingale
/// `int phi_z dW + sum_k int phi_k dN~_k`, stored step-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Integrands {
    paths: usize,
    steps: usize,
    marks: usize,
    phi_z: Vec<f64>,
    phi_jump: Vec<f64>,
}

impl Integrands {
    pub fn new(paths: usize, steps: usize, marks: usize, phi_z: Vec<f64>, phi_jump: Vec<f64>) -> Result<Self> {
        if phi_z.len() != steps * paths || phi_jump.len() != steps * marks * paths {
            return Err(Error::InvalidArgument("integrand arrays have the wrong shape".into()));
        }
        if phi_z.iter().chain(&phi_jump).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("integrands must be finite".into()));
        }
        Ok(Self {
            paths,
            steps,
            marks,
            phi_z,
            phi_jump,
        })
    }

    /// Deterministic integrands, the same on every path and step.
    pub fn constant(bundle: &PathBundle, phi_z: f64, phi_jump: &[f64]) -> Result<Self> {
        let (m, n, kk) = (bundle.paths(), bundle.steps(), bundle.mark_count());
        if phi_jump.len() != kk {
            return Err(Error::InvalidArgument(format!(
                "{} jump integrands for {kk} marks",
                phi_jump.len()
            )));
        }
        let mut jumps = Vec::with_capacity(n * kk * m);
        for _ in 0..n {
            for &p in phi_jump {
                jumps.extend(std::iter::repeat_n(p, m));
            }
        }
        Self::new(m, n, kk, vec![phi_z; n * m], jumps)
    }

    /// `phi_z = d_z g` and `phi_k = d_{u_k} g` along solved controls.
    pub fn from_driver(driver: &Driver, solution: &BsdeSolution) -> Result<Self> {
        let (m, n, kk) = (solution.paths(), solution.steps(), solution.mark_count());
        let mut phi_z = Vec::with_capacity(n * m);
        let mut phi_jump = vec![0.0; n * kk * m];
        let mut u = vec![0.0; kk];
        let mut grad = vec![0.0; kk];
        for i in 0..n {
            let z = solution.z(i);
            for p in 0..m {
                solution.ups_at(i, p, &mut u);
                phi_z.push(driver.dz(z[p], &u));
                driver.jump_gradient(z[p], &u, &mut grad);
                for k in 0..kk {
                    phi_jump[(i * kk + k) * m + p] = grad[k];
                }
            }
        }
        Self::new(m, n, kk, phi_z, phi_jump)
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn mark_count(&self) -> usize {
        self.marks
    }

    pub fn phi_z(&self, step: usize) -> &[f64] {
        &self.phi_z[step * self.paths..(step + 1) * self.paths]
    }

    pub fn phi_jump(&self, step: usize, mark: usize) -> &[f64] {
        let o = (step * self.marks + mark) * self.paths;
        &self.phi_jump[o..o + self.paths]
    }

    /// Smallest `1 + phi_k` with its location `(step, mark, path)`;
    /// `None` without marks.
    pub fn worst_jump_factor(&self) -> Option<(f64, usize, usize, usize)> {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for (idx, v) in self.phi_jump.iter().enumerate() {
            let f = 1.0 + v;
            if best.is_none_or(|b| f < b.0) {
                let p = idx % self.paths;
                let sk = idx / self.paths;
                best = Some((f, sk / self.marks, sk % self.marks, p));
            }
        }
        best
    }
}

/// Density process `Lambda(t_i)`, node-major, with its integrands.
#[derive(Debug, Clone, PartialEq)]
pub struct RnProcess {
    integrands: Integrands,
    lambda: Vec<f64>,
}

impl RnProcess {
    pub fn integrands(&self) -> &Integrands {
        &self.integrands
    }

    pub fn paths(&self) -> usize {
        self.integrands.paths
    }

    pub fn steps(&self) -> usize {
        self.integrands.steps
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let m = self.paths();
        &self.lambda[node * m..(node + 1) * m]
    }

    pub fn terminal(&self) -> &[f64] {
        self.at(self.steps())
    }

    /// `Lambda(T) / Lambda(t_node)` on every path.
    pub fn ratio(&self, node: usize) -> Vec<f64> {
        self.terminal().iter().zip(self.at(node)).map(|(a, b)| a / b).collect()
    }

    /// Smallest `1 + phi_k` over paths, steps and marks; infinite without marks.
    pub fn kazamaki_margin(&self) -> f64 {
        self.integrands.worst_jump_factor().map_or(f64::INFINITY, |w| w.0)
    }
}

/// Exact per-step factors
/// `exp(phi_z dW - phi_z^2 dt / 2) prod_k (1 + phi_k)^{dN_k} exp(-phi_k lambda_k dt)`.
pub fn doleans_dade(bundle: &PathBundle, integrands: &Integrands) -> Result<RnProcess> {
    let (m, n, kk) = (bundle.paths(), bundle.steps(), bundle.mark_count());
    if integrands.paths != m || integrands.steps != n || integrands.marks != kk {
        return Err(Error::InvalidArgument("integrands do not match the path bundle".into()));
    }
    let dt = bundle.dt();
    let lambdas = bundle.model().intensities();
    let mut lambda = vec![1.0; (n + 1) * m];
    for i in 0..n {
        let (head, tail) = lambda.split_at_mut((i + 1) * m);
        let prev = &head[i * m..];
        let next = &mut tail[..m];
        let (pz, dw) = (integrands.phi_z(i), bundle.dw(i));
        for p in 0..m {
            next[p] = (pz[p] * dw[p] - 0.5 * pz[p] * pz[p] * dt).exp();
        }
        for (k, &lam) in lambdas.iter().enumerate() {
            let (phi, dn) = (integrands.phi_jump(i, k), bundle.dn(i, k));
            for p in 0..m {
                let f = 1.0 + phi[p];
                if dn[p] > 0 && f <= 0.0 {
                    return Err(Error::SignedDensity {
                        step: i,
                        mark: k,
                        path: p,
                        factor: f,
                    });
                }
                next[p] *= f.powi(dn[p] as i32) * (-phi[p] * lam * dt).exp();
            }
        }
        for p in 0..m {
            next[p] *= prev[p];
        }
    }
    Ok(RnProcess {
        integrands: integrands.clone(),
        lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KazamakiReport {
    pub pass: bool,
    /// `min(1 + phi_k) - delta`; infinite without marks.
    pub margin: f64,
}

/// Every jump integrand must satisfy `phi_k >= -1 + delta`.
pub fn kazamaki_check(integrands: &Integrands, delta: f64) -> Result<KazamakiReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {delta}")));
    }
    let margin = integrands.worst_jump_factor().map_or(f64::INFINITY, |w| w.0 - delta);
    Ok(KazamakiReport {
        pass: margin >= 0.0,
        margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeMean {
    pub node: usize,
    pub mean: f64,
    pub std_error: f64,
    /// `|mean - 1|` beyond three standard errors.
    pub flagged: bool,
}

pub fn martingale_diagnostic(rn: &RnProcess) -> Vec<NodeMean> {
    (0..=rn.steps())
        .map(|node| {
            let v = rn.at(node);
            let mean = stats::mean(v);
            let std_error = stats::std_error(v);
            NodeMean {
                node,
                mean,
                std_error,
                flagged: (mean - 1.0).abs() > 3.0 * std_error + 1e-12,
            }
        })
        .collect()
}

/// `E^Q[payload | X(t)]` with self-normalized weights `Lambda(T)/Lambda(t)`:
/// a weighted mean at the initial node, a ratio of two regressions after.
pub fn reweighted_expectation(
    rn: &RnProcess,
    bundle: &PathBundle,
    payload: &[f64],
    node: usize,
    cfg: &RegressionConfig,
) -> Result<Estimate> {
    let (v, infl) = reweighted_with_influence(rn, bundle, payload, node, cfg)?;
    Ok(Estimate {
        values: v,
        std_error: stats::std_error(&infl),
    })
}

/// As [`reweighted_expectation`], also returning path-wise influence samples
/// of the time-zero value.
pub(crate) fn reweighted_with_influence(
    rn: &RnProcess,
    bundle: &PathBundle,
    payload: &[f64],
    node: usize,
    cfg: &RegressionConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = rn.paths();
    if payload.len() != m || bundle.paths() != m {
        return Err(Error::InvalidArgument("payload length does not match the paths".into()));
    }
    if node > rn.steps() {
        return Err(Error::InvalidArgument(format!("node {node} is outside the grid")));
    }
    reweight(bundle, &rn.ratio(node), rn.terminal(), payload, node, cfg)
}

/// Self-normalized `E[w_t payload | X(t)] / E[w_t | X(t)]`, with influence
/// samples of the time-zero value built from the terminal weights `w_0`.
pub(crate) fn reweight(
    bundle: &PathBundle,
    w_t: &[f64],
    w_0: &[f64],
    payload: &[f64],
    node: usize,
    cfg: &RegressionConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = payload.len();
    if let Some(&c) = payload.first() {
        if payload.iter().all(|&v| v == c) {
            return Ok((vec![c; m], vec![c; m]));
        }
    }
    let (est, infl) = weighted_influence(w_0, payload)?;
    if node == 0 {
        return Ok((vec![est; m], infl));
    }
    let wp: Vec<f64> = w_t.iter().zip(payload).map(|(a, b)| a * b).collect();
    let proj = Projector::at_node(bundle, node, cfg)?;
    let (num, den) = (proj.fit(&wp), proj.fit(w_t));
    let bad: Vec<usize> = den
        .iter()
        .enumerate()
        .filter(|(_, d)| d.is_nan() || **d <= 0.0)
        .map(|(p, _)| p)
        .collect();
    if !bad.is_empty() {
        return Err(Error::EstimatorFailure {
            reason: format!("nonpositive density estimate at node {node}"),
            paths: bad,
        });
    }
    Ok((num.iter().zip(&den).map(|(a, b)| a / b).collect(), infl))
}

/// Influence samples `est + w (p - est) / mean(w)`; their mean is the
/// self-normalized estimate.
pub(crate) fn weighted_influence(w: &[f64], payload: &[f64]) -> Result<(f64, Vec<f64>)> {
    let sw = stats::sum(w);
    if sw.is_nan() || sw <= 0.0 {
        return Err(Error::EstimatorFailure {
            reason: "density weights sum to zero".into(),
            paths: Vec::new(),
        });
    }
    let est = stats::dot(w, payload) / sw;
    let wbar = sw / w.len() as f64;
    Ok((
        est,
        w.iter().zip(payload).map(|(a, p)| est + a * (p - est) / wbar).collect(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub step: usize,
    /// `None` for the Brownian increment.
    pub mark: Option<usize>,
    pub observed: f64,
    pub expected: f64,
    pub std_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GirsanovReport {
    pub rows: Vec<ShiftRow>,
}

impl GirsanovReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }
}

/// Under `Q`, `E[dW_i] = E[phi_z(t_i)] dt` and `E[dN_k,i] = lambda_k E[1 + phi_k(t_i)] dt`.
/// Tested per step with weights `Lambda(t_{i+1})` at four standard errors.
pub fn girsanov_shift_check(bundle: &PathBundle, rn: &RnProcess) -> Result<GirsanovReport> {
    let (n, kk) = (rn.steps(), rn.integrands.marks);
    let dt = bundle.dt();
    let lambdas = bundle.model().intensities();
    let mut rows = Vec::with_capacity(n * (kk + 1));
    let mut row = |step, mark, incr: Vec<f64>, drift: Vec<f64>, w: &[f64]| -> Result<()> {
        let obs = stats::dot(w, &incr) / stats::sum(w);
        let exp = stats::dot(w, &drift) / stats::sum(w);
        let diff: Vec<f64> = incr.iter().zip(&drift).map(|(a, b)| a - b).collect();
        let (_, infl) = weighted_influence(w, &diff)?;
        let se = stats::std_error(&infl);
        rows.push(ShiftRow {
            step,
            mark,
            observed: obs,
            expected: exp,
            std_error: se,
            pass: (obs - exp).abs() <= 4.0 * se + 1e-14,
        });
        Ok(())
    };
    for i in 0..n {
        let w = rn.at(i + 1);
        let drift = rn.integrands.phi_z(i).iter().map(|p| p * dt).collect();
        row(i, None, bundle.dw(i).to_vec(), drift, w)?;
        for (k, &lam) in lambdas.iter().enumerate() {
            let incr = bundle.dn(i, k).iter().map(|&c| c as f64).collect();
            let drift = rn
                .integrands
                .phi_jump(i, k)
                .iter()
                .map(|p| lam * (1.0 + p) * dt)
                .collect();
            row(i, Some(k), incr, drift, w)?;
        }
    }
    Ok(GirsanovReport { rows })
}
