//! Dynamic risk measures induced by BSDEs, the entropic closed form, the
//! static entropic coherent measure at level `c`, and an axiom test suite.

use serde::{Deserialize, Serialize};

use crate::bsde::{centred_tilt, solve_bsde, BsdeSolution, Projector, RegressionConfig};
use crate::drivers::{Driver, DriverFamily};
use crate::error::{Error, Result};
use crate::market::PathBundle;
use crate::payoff::Payoff;
use crate::stats::{self, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RiskMode {
    Bsde,
    EntropicClosedForm,
}

/// Risk values at one node together with path-wise influence samples whose
/// mean is the time-zero value; differences of influence samples give
/// standard errors for common-random-number comparisons.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskValue {
    pub values: Vec<f64>,
    pub influence: Vec<f64>,
}

impl RiskValue {
    pub fn scalar(&self) -> f64 {
        self.values[0]
    }

    pub fn std_error(&self) -> f64 {
        stats::std_error(&self.influence)
    }

    pub fn into_estimate(self) -> Estimate {
        let se = self.std_error();
        Estimate {
            values: self.values,
            std_error: se,
        }
    }
}

/// `rho_t(xi) = Y(t)` for the BSDE with terminal `-xi`.
#[derive(Debug, Clone)]
pub struct RiskEngine<'a> {
    bundle: &'a PathBundle,
    driver: Driver,
    cfg: RegressionConfig,
    mode: RiskMode,
}

impl<'a> RiskEngine<'a> {
    pub fn new(bundle: &'a PathBundle, driver: Driver, cfg: RegressionConfig) -> Self {
        Self {
            bundle,
            driver,
            cfg,
            mode: RiskMode::Bsde,
        }
    }

    /// Evaluates through `(1/gamma) ln E[exp(-gamma xi) | X(t)]` instead of the
    /// solver; the driver must be entropic.
    pub fn closed_form(bundle: &'a PathBundle, driver: Driver, cfg: RegressionConfig) -> Result<Self> {
        if driver.family() != DriverFamily::Entropic {
            return Err(Error::Misuse("closed-form mode needs an entropic driver".into()));
        }
        Ok(Self {
            bundle,
            driver,
            cfg,
            mode: RiskMode::EntropicClosedForm,
        })
    }

    pub fn bundle(&self) -> &'a PathBundle {
        self.bundle
    }

    pub fn driver(&self) -> &Driver {
        &self.driver
    }

    pub fn config(&self) -> &RegressionConfig {
        &self.cfg
    }

    pub fn mode(&self) -> RiskMode {
        self.mode
    }

    /// Engine on the same paths with another generator.
    pub fn with_driver(&self, driver: Driver) -> Self {
        Self {
            driver,
            mode: RiskMode::Bsde,
            ..self.clone()
        }
    }

    /// Solves the risk BSDE for terminal `-xi` given path-wise values of `xi`.
    pub fn solve(&self, xi: &[f64]) -> Result<BsdeSolution> {
        let neg: Vec<f64> = xi.iter().map(|v| -v).collect();
        solve_bsde(self.bundle, &self.driver, &neg, &self.cfg)
    }

    /// Risk of the position with path-wise terminal values `xi`.
    pub fn evaluate(&self, xi: &[f64], node: usize) -> Result<RiskValue> {
        check_node(self.bundle, node)?;
        if node == self.bundle.steps() {
            let neg: Vec<f64> = xi.iter().map(|v| -v).collect();
            return Ok(RiskValue {
                values: neg.clone(),
                influence: neg,
            });
        }
        match self.mode {
            RiskMode::Bsde => {
                let sol = self.solve(xi)?;
                Ok(RiskValue {
                    values: sol.y(node).to_vec(),
                    influence: sol.y0_samples().to_vec(),
                })
            }
            RiskMode::EntropicClosedForm => {
                let gamma = self.driver.gamma().expect("checked at construction");
                entropic_values(gamma, xi, node, self.bundle, &self.cfg)
            }
        }
    }

    pub fn risk(&self, xi: &Payoff, node: usize) -> Result<Estimate> {
        xi.validate()?;
        Ok(self.evaluate(&self.bundle.terminal_values(xi), node)?.into_estimate())
    }
}

fn check_node(bundle: &PathBundle, node: usize) -> Result<()> {
    if node > bundle.steps() {
        return Err(Error::InvalidArgument(format!(
            "node {node} is outside a grid of {} steps",
            bundle.steps()
        )));
    }
    Ok(())
}

pub fn dynamic_risk(engine: &RiskEngine<'_>, xi: &Payoff, node: usize) -> Result<Estimate> {
    engine.risk(xi, node)
}

pub(crate) fn entropic_values(
    gamma: f64,
    xi: &[f64],
    node: usize,
    bundle: &PathBundle,
    cfg: &RegressionConfig,
) -> Result<RiskValue> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
    }
    check_node(bundle, node)?;
    if node == bundle.steps() {
        let neg: Vec<f64> = xi.iter().map(|v| -v).collect();
        return Ok(RiskValue {
            values: neg.clone(),
            influence: neg,
        });
    }
    // shift by the smallest outcome so the exponentials stay in (0, 1]
    let lo = xi.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = xi.iter().map(|v| (-gamma * (v - lo)).exp()).collect();
    let wbar = stats::mean(&w);
    let rho0 = -lo + wbar.ln() / gamma;
    let influence: Vec<f64> = w.iter().map(|v| rho0 + (v / wbar - 1.0) / gamma).collect();
    let values = if node == 0 {
        vec![rho0; xi.len()]
    } else {
        let proj = Projector::at_node(bundle, node, cfg)?;
        let (centre, tilt) = centred_tilt(&proj, xi, gamma);
        let fit = proj.fit(&tilt);
        let bad: Vec<usize> = fit
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_nan() || **v <= 0.0)
            .map(|(p, _)| p)
            .collect();
        if !bad.is_empty() {
            return Err(Error::EstimatorFailure {
                reason: format!("nonpositive conditional expectation at node {node}"),
                paths: bad,
            });
        }
        fit.iter().zip(&centre).map(|(v, c)| -c + v.ln() / gamma).collect()
    };
    Ok(RiskValue { values, influence })
}

/// `(1/gamma) ln E[exp(-gamma xi) | X(t)]` by plain averaging at the initial
/// node and regression afterwards.
pub fn entropic_closed_form(
    gamma: f64,
    xi: &Payoff,
    node: usize,
    bundle: &PathBundle,
    cfg: &RegressionConfig,
) -> Result<Estimate> {
    xi.validate()?;
    Ok(entropic_values(gamma, &bundle.terminal_values(xi), node, bundle, cfg)?.into_estimate())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticCoherent {
    /// Minimizing risk aversion; `None` for a constant position.
    pub gamma: Option<f64>,
    pub rho: f64,
    /// Relative entropy of the minimizing measure; equals `c` at the root.
    pub entropy: f64,
    pub degenerate: bool,
}

struct Tilt {
    log_mgf: f64,
    q_mean_loss: f64,
}

/// `ln E[exp(-g xi)]` and `E^Q[-xi]` under the exponential tilt, computed with
/// a shift for stability.
fn tilt(g: f64, xi: &[f64]) -> Tilt {
    let lo = xi.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = xi.iter().map(|v| (-g * (v - lo)).exp()).collect();
    let sw = stats::sum(&w);
    let neg: Vec<f64> = xi.iter().map(|v| -v).collect();
    Tilt {
        log_mgf: -g * lo + (sw / xi.len() as f64).ln(),
        q_mean_loss: stats::dot(&w, &neg) / sw,
    }
}

/// Relative entropy of the tilted measure at risk aversion `g`.
pub fn tilted_entropy(g: f64, xi: &[f64]) -> f64 {
    let t = tilt(g, xi);
    g * t.q_mean_loss - t.log_mgf
}

/// `c/g + (1/g) ln E[exp(-g xi)]`
pub fn entropic_coherent_objective(c: f64, g: f64, xi: &[f64]) -> f64 {
    (c + tilt(g, xi).log_mgf) / g
}

const GAMMA_MIN: f64 = 1e-6;
const GAMMA_MAX: f64 = 1e3;

/// Infimum over `gamma > 0` of the entropic objective at level `c`, found by
/// bisection on the stationarity condition `entropy(gamma) = c`.
pub fn entropic_coherent_static(c: f64, xi: &[f64]) -> Result<StaticCoherent> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("level c must be positive, got {c}")));
    }
    if xi.is_empty() || xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("samples must be finite and nonempty".into()));
    }
    if xi.iter().all(|v| *v == xi[0]) {
        return Ok(StaticCoherent {
            gamma: None,
            rho: -xi[0],
            entropy: 0.0,
            degenerate: true,
        });
    }
    let h = |g: f64| tilted_entropy(g, xi) - c;
    let mut lo = GAMMA_MIN;
    if h(lo) > 0.0 {
        return Err(Error::RootFailure(format!("entropy already exceeds c at gamma = {lo}")));
    }
    let mut hi = 1.0_f64.max(lo);
    while h(hi) < 0.0 {
        if hi >= GAMMA_MAX {
            return Err(Error::RootFailure(format!(
                "entropy stays below c = {c} on [{GAMMA_MIN}, {GAMMA_MAX}]"
            )));
        }
        lo = hi;
        hi = (hi * 2.0).min(GAMMA_MAX);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    Ok(StaticCoherent {
        gamma: Some(g),
        rho: entropic_coherent_objective(c, g, xi),
        entropy: tilted_entropy(g, xi),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axiom {
    Monotonicity,
    Translation,
    Convexity,
    PositiveHomogeneity,
    Subadditivity,
    TerminalCondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AxiomThresholds {
    pub monotonicity: f64,
    pub translation: f64,
    pub convexity: f64,
    pub homogeneity: f64,
    pub subadditivity: f64,
}

impl Default for AxiomThresholds {
    fn default() -> Self {
        Self {
            monotonicity: 5e-3,
            translation: 5e-3,
            convexity: 5e-3,
            homogeneity: 1e-2,
            subadditivity: 5e-3,
        }
    }
}

/// Positions for the axiom suite. Each pair `(lower, upper)` must be ordered
/// path-wise on the bundle; the first entries also serve as base positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiomInputs {
    pub pairs: Vec<(Payoff, Payoff)>,
    pub constants: Vec<f64>,
    pub scales: Vec<f64>,
    pub mixing: Vec<f64>,
    pub thresholds: AxiomThresholds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomCheck {
    pub axiom: Axiom,
    pub detail: String,
    /// Violation size; zero or negative values satisfy the axiom exactly.
    pub residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub checks: Vec<AxiomCheck>,
}

impl AxiomReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn worst(&self, axiom: Axiom) -> Option<&AxiomCheck> {
        self.checks
            .iter()
            .filter(|c| c.axiom == axiom)
            .max_by(|a, b| a.residual.total_cmp(&b.residual))
    }
}

/// Time-zero residuals for the risk-measure axioms under common random
/// numbers. Convexity is tested for convex generators, homogeneity and
/// subadditivity for positively homogeneous ones.
pub fn axiom_suite(engine: &RiskEngine<'_>, inputs: &AxiomInputs) -> Result<AxiomReport> {
    let th = inputs.thresholds;
    let bundle = engine.bundle();
    let rho = |xi: &Payoff| -> Result<f64> { Ok(engine.risk(xi, 0)?.scalar()) };
    let mut checks = Vec::new();
    let mut push = |axiom, detail: String, residual: f64, tolerance: f64| {
        checks.push(AxiomCheck {
            axiom,
            detail,
            residual,
            tolerance,
            pass: residual <= tolerance,
        })
    };

    for (j, (lower, upper)) in inputs.pairs.iter().enumerate() {
        let lv = bundle.terminal_values(lower);
        let uv = bundle.terminal_values(upper);
        if lv.iter().zip(&uv).any(|(a, b)| a > b) {
            return Err(Error::InvalidArgument(format!("pair {j} is not ordered path-wise")));
        }
        let (rl, ru) = (engine.evaluate(&lv, 0)?.scalar(), engine.evaluate(&uv, 0)?.scalar());
        push(Axiom::Monotonicity, format!("pair {j}"), ru - rl, th.monotonicity);

        let terminal = engine.evaluate(&lv, bundle.steps())?;
        let gap = terminal
            .values
            .iter()
            .zip(&lv)
            .map(|(r, x)| (r + x).abs())
            .fold(0.0, f64::max);
        push(Axiom::TerminalCondition, format!("pair {j}"), gap, 0.0);

        for &m in &inputs.constants {
            let r = rho(&lower.plus_constant(m))?;
            push(
                Axiom::Translation,
                format!("pair {j}, m = {m}"),
                (r - rl + m).abs(),
                th.translation,
            );
        }
        if engine.driver().convex_in_controls() {
            for &lam in &inputs.mixing {
                let mix = Payoff::portfolio(vec![lower.clone().scaled(lam), upper.clone().scaled(1.0 - lam)]);
                let r = rho(&mix)?;
                push(
                    Axiom::Convexity,
                    format!("pair {j}, lambda = {lam}"),
                    r - lam * rl - (1.0 - lam) * ru,
                    th.convexity,
                );
            }
        }
        if engine.driver().positively_homogeneous() {
            for &c in &inputs.scales {
                let r = rho(&lower.clone().scaled(c))?;
                push(
                    Axiom::PositiveHomogeneity,
                    format!("pair {j}, scale = {c}"),
                    (r - c * rl).abs(),
                    th.homogeneity,
                );
            }
            let r = rho(&Payoff::portfolio(vec![lower.clone(), upper.clone()]))?;
            push(Axiom::Subadditivity, format!("pair {j}"), r - rl - ru, th.subadditivity);
        }
    }
    Ok(AxiomReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::LinearForm;
    use crate::market::{build_grid, simulate_paths, LevyModel};

    fn bundle(paths: usize, vol: f64) -> PathBundle {
        let model = LevyModel::brownian(0.0, 0.0, vol).unwrap();
        simulate_paths(&build_grid(1.0, 10).unwrap(), &model, paths, 21).unwrap()
    }

    #[test]
    fn constants_are_riskless() {
        let b = bundle(5000, 0.3);
        let e = RiskEngine::new(&b, Driver::entropic(1.0, &[]).unwrap(), RegressionConfig::default());
        let r = dynamic_risk(&e, &Payoff::constant(0.4), 0).unwrap();
        assert!((r.scalar() + 0.4).abs() < 1e-10);
        for node in [0, 5, 10] {
            let c = entropic_closed_form(1.0, &Payoff::constant(0.4), node, &b, &RegressionConfig::default()).unwrap();
            assert!(c.values.iter().all(|v| *v == -0.4));
        }
    }

    #[test]
    fn terminal_risk_is_minus_position() {
        let b = bundle(1000, 0.3);
        let e = RiskEngine::new(&b, Driver::entropic(1.0, &[]).unwrap(), RegressionConfig::default());
        let xi = Payoff::exp_affine(1.0, 1.0);
        let r = dynamic_risk(&e, &xi, 10).unwrap();
        for (v, x) in r.values.iter().zip(b.terminal_values(&xi)) {
            assert_eq!(*v, -x);
        }
    }

    #[test]
    fn gaussian_closed_form() {
        let b = bundle(100_000, 0.2);
        let r = entropic_closed_form(1.0, &Payoff::identity(), 0, &b, &RegressionConfig::default()).unwrap();
        assert!((r.scalar() - 0.02).abs() < 3e-3, "{}", r.scalar());
    }

    #[test]
    fn small_risk_aversion_approaches_expected_loss() {
        let b = bundle(50_000, 0.3);
        let xi = Payoff::clip(Payoff::identity(), -0.5, 0.5);
        let xv = b.terminal_values(&xi);
        let r = entropic_closed_form(0.01, &xi, 0, &b, &RegressionConfig::default()).unwrap();
        assert!((r.scalar() + stats::mean(&xv)).abs() < 1e-2);
    }

    #[test]
    fn closed_form_mode_needs_entropic_driver() {
        let b = bundle(100, 0.3);
        let d = Driver::sublinear(vec![LinearForm::new(0.5, vec![])], &[]).unwrap();
        assert!(matches!(
            RiskEngine::closed_form(&b, d, RegressionConfig::default()),
            Err(Error::Misuse(_))
        ));
    }

    #[test]
    fn two_point_static_coherent() {
        let xi = [1.0, -1.0];
        let s = entropic_coherent_static(0.1, &xi).unwrap();
        let g = s.gamma.unwrap();
        // entropy of the two-point tilt in closed form
        let entropy = g * g.tanh() - g.cosh().ln();
        assert!((entropy - 0.1).abs() < 1e-9);
        assert!((s.entropy - 0.1).abs() < 1e-6);
        let scaled = entropic_coherent_static(0.1, &[2.0, -2.0]).unwrap();
        assert!((scaled.rho - 2.0 * s.rho).abs() < 1e-8);
    }

    #[test]
    fn degenerate_static_position() {
        let s = entropic_coherent_static(0.1, &[0.3; 10]).unwrap();
        assert!(s.degenerate && s.gamma.is_none());
        assert_eq!(s.rho, -0.3);
    }

    #[test]
    fn unreachable_level_fails_to_bracket() {
        // entropy of a two-point tilt never exceeds ln 2
        assert!(matches!(
            entropic_coherent_static(1.0, &[1.0, -1.0]),
            Err(Error::RootFailure(_))
        ));
    }

    #[test]
    fn axioms_hold_for_entropic_engine() {
        let b = bundle(20_000, 0.3);
        let e = RiskEngine::new(&b, Driver::entropic(1.0, &[]).unwrap(), RegressionConfig::default());
        let xi = Payoff::identity();
        let inputs = AxiomInputs {
            pairs: vec![(xi.clone(), xi.plus_constant(0.5))],
            constants: vec![1.0],
            scales: vec![2.0],
            mixing: vec![0.3],
            thresholds: AxiomThresholds::default(),
        };
        let rep = axiom_suite(&e, &inputs).unwrap();
        assert!(rep.all_pass(), "{rep:?}");
        assert!(rep.worst(Axiom::PositiveHomogeneity).is_none());
    }

    #[test]
    fn unordered_pair_is_rejected() {
        let b = bundle(500, 0.3);
        let e = RiskEngine::new(&b, Driver::entropic(1.0, &[]).unwrap(), RegressionConfig::default());
        let inputs = AxiomInputs {
            pairs: vec![(Payoff::identity(), Payoff::constant(0.0))],
            constants: vec![],
            scales: vec![],
            mixing: vec![],
            thresholds: AxiomThresholds::default(),
        };
        assert!(axiom_suite(&e, &inputs).is_err());
    }
}
