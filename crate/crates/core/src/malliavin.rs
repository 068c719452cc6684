//! Malliavin derivatives of terminal functionals of the arithmetic model,
//! Clark-Ocone reconstruction, and the entropic controls written through
//! conditional derivatives.

use serde::{Deserialize, Serialize};

use crate::bsde::{centred_tilt, Projector, RegressionConfig};
use crate::error::{Error, Result};
use crate::market::PathBundle;
use crate::measure::{doleans_dade, Integrands};
use crate::payoff::Payoff;
use crate::stats;

/// `D_t xi = f'(X(T)) sigma` and `D_{t,zeta_k} xi = f(X(T) + zeta_k) - f(X(T))`
/// for `t <= T`. Both are constant in `t` for terminal functionals, so a
/// single value per path is stored.
#[derive(Debug, Clone, PartialEq)]
pub struct MalliavinField {
    horizon: f64,
    brownian: Vec<f64>,
    jumps: Vec<Vec<f64>>,
}

impl MalliavinField {
    /// `D_t xi` on every path; zero beyond the horizon.
    pub fn brownian(&self, t: f64) -> Vec<f64> {
        if t > self.horizon {
            vec![0.0; self.brownian.len()]
        } else {
            self.brownian.clone()
        }
    }

    pub fn jump(&self, t: f64, mark: usize) -> Vec<f64> {
        if t > self.horizon {
            vec![0.0; self.brownian.len()]
        } else {
            self.jumps[mark].clone()
        }
    }

    pub(crate) fn brownian_values(&self) -> &[f64] {
        &self.brownian
    }

    pub(crate) fn jump_values(&self, mark: usize) -> &[f64] {
        &self.jumps[mark]
    }

    /// `E[D_t xi | X(t_node)]` and `E[D_{t,zeta_k} xi | X(t_node)]`.
    pub fn projections(
        &self,
        bundle: &PathBundle,
        node: usize,
        cfg: &RegressionConfig,
    ) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let proj = Projector::at_node(bundle, node, cfg)?;
        let u = proj.fit(&self.brownian);
        let v = self.jumps.iter().map(|j| proj.fit(j)).collect();
        Ok((u, v))
    }
}

pub fn malliavin_derivative(xi: &Payoff, bundle: &PathBundle) -> Result<MalliavinField> {
    xi.validate()?;
    let model = bundle.model();
    let x = bundle.terminal_state();
    let sigma = model.vol();
    let brownian = x.iter().map(|v| xi.derivative(*v) * sigma).collect();
    let jumps = model
        .marks()
        .iter()
        .map(|mk| x.iter().map(|v| xi.eval(v + mk.size) - xi.eval(*v)).collect())
        .collect();
    Ok(MalliavinField {
        horizon: bundle.grid().horizon(),
        brownian,
        jumps,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClarkOcone {
    /// Control-variate estimate of `E[xi]` used as the constant term.
    pub constant: f64,
    /// `||xi_hat - xi|| / ||xi||` over paths.
    pub residual: f64,
    /// Sample mean and standard error of the stochastic-integral part.
    pub integral_mean: f64,
    pub integral_std_error: f64,
    /// `u(t_i)` and `v_k(t_i)`, step-major.
    pub brownian_integrand: Vec<f64>,
    pub jump_integrand: Vec<f64>,
}

/// Reconstructs `xi` from the projected derivatives,
/// `xi_hat = c + sum_i u(t_i) dW_i + sum_{i,k} v_k(t_i) dN~_{k,i}`.
pub fn clark_ocone(xi: &Payoff, bundle: &PathBundle, cfg: &RegressionConfig) -> Result<ClarkOcone> {
    let field = malliavin_derivative(xi, bundle)?;
    let (m, n, kk) = (bundle.paths(), bundle.steps(), bundle.mark_count());
    let xv = bundle.terminal_values(xi);
    let mut integral = vec![0.0; m];
    let mut bi = Vec::with_capacity(n * m);
    let mut ji = Vec::with_capacity(n * kk * m);
    for i in 0..n {
        let (u, v) = field.projections(bundle, i, cfg)?;
        for (acc, (a, w)) in integral.iter_mut().zip(u.iter().zip(bundle.dw(i))) {
            *acc += a * w;
        }
        for (k, vk) in v.iter().enumerate() {
            for (acc, (a, c)) in integral.iter_mut().zip(vk.iter().zip(bundle.compensated_dn(i, k))) {
                *acc += a * c;
            }
        }
        bi.extend_from_slice(&u);
        for vk in v {
            ji.extend(vk);
        }
    }
    let centred: Vec<f64> = xv.iter().zip(&integral).map(|(x, s)| x - s).collect();
    let constant = stats::mean(&centred);
    let err: Vec<f64> = centred.iter().map(|d| d - constant).collect();
    let norm = stats::dot(&xv, &xv).sqrt();
    let residual = if norm > 0.0 {
        stats::dot(&err, &err).sqrt() / norm
    } else {
        stats::dot(&err, &err).sqrt()
    };
    Ok(ClarkOcone {
        constant,
        residual,
        integral_mean: stats::mean(&integral),
        integral_std_error: stats::std_error(&integral),
        brownian_integrand: bi,
        jump_integrand: ji,
    })
}

/// Example controls of the entropic BSDE with terminal `-beta xi`, built from
/// `Gamma(t) = E[exp(-gamma beta xi) | F_t]`. All grid processes are
/// step-major; `gamma_process` holds `Gamma(t_i) / Gamma(0)` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropicControls {
    pub paths: usize,
    pub steps: usize,
    pub marks: usize,
    pub z: Vec<f64>,
    /// `(1/gamma) ln(E[exp(-gamma beta (xi + D_zeta xi))] / Gamma)`
    pub ups_exact: Vec<f64>,
    /// `-beta E[exp(-gamma beta xi) D_zeta xi] / Gamma`
    pub ups_literal: Vec<f64>,
    pub gamma_process: Vec<f64>,
    /// Root mean square gap between the two jump controls.
    pub jump_gap: f64,
}

impl EntropicControls {
    pub fn z(&self, step: usize) -> &[f64] {
        &self.z[step * self.paths..(step + 1) * self.paths]
    }

    pub fn ups_exact(&self, step: usize, mark: usize) -> &[f64] {
        let o = (step * self.marks + mark) * self.paths;
        &self.ups_exact[o..o + self.paths]
    }

    pub fn ups_literal(&self, step: usize, mark: usize) -> &[f64] {
        let o = (step * self.marks + mark) * self.paths;
        &self.ups_literal[o..o + self.paths]
    }

    pub fn gamma_ratio(&self, node: usize) -> &[f64] {
        &self.gamma_process[node * self.paths..(node + 1) * self.paths]
    }
}

fn positive(fit: &[f64], what: &str, node: usize) -> Result<()> {
    let bad: Vec<usize> = fit
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_nan() || **v <= 0.0)
        .map(|(p, _)| p)
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::EstimatorFailure {
            reason: format!("nonpositive estimate of {what} at node {node}"),
            paths: bad,
        })
    }
}

pub fn entropic_controls(
    gamma: f64,
    beta: f64,
    xi: &Payoff,
    bundle: &PathBundle,
    cfg: &RegressionConfig,
) -> Result<EntropicControls> {
    if !(gamma > 0.0 && gamma.is_finite() && beta.is_finite()) {
        return Err(Error::InvalidArgument("gamma must be positive and beta finite".into()));
    }
    let field = malliavin_derivative(xi, bundle)?;
    let (m, n, kk) = (bundle.paths(), bundle.steps(), bundle.mark_count());
    let xv = bundle.terminal_values(xi);
    let gb = gamma * beta;
    let shift = xv.iter().map(|v| -gb * v).fold(f64::NEG_INFINITY, f64::max);
    let log_gamma0 = shift + stats::mean(&xv.iter().map(|v| (-gb * v - shift).exp()).collect::<Vec<_>>()).ln();

    let mut z = Vec::with_capacity(n * m);
    let mut ups_exact = Vec::with_capacity(n * kk * m);
    let mut ups_literal = Vec::with_capacity(n * kk * m);
    let mut gamma_process = Vec::with_capacity((n + 1) * m);
    let mut sq = 0.0;
    for i in 0..n {
        let proj = Projector::at_node(bundle, i, cfg)?;
        // ratios of conditional expectations of exp(-gb xi) times a payload
        // are unchanged when the weights are tilted around the projection
        let (centre, e) = centred_tilt(&proj, &xv, gb);
        let g = proj.fit(&e);
        positive(&g, "Gamma", i)?;
        gamma_process.extend(g.iter().zip(&centre).map(|(v, c)| (v.ln() - gb * c - log_gamma0).exp()));
        let e_dt: Vec<f64> = e.iter().zip(field.brownian_values()).map(|(a, d)| a * d).collect();
        let num = proj.fit(&e_dt);
        z.extend(num.iter().zip(&g).map(|(a, b)| -beta * a / b));
        for k in 0..kk {
            let dj = field.jump_values(k);
            let shifted: Vec<f64> = e.iter().zip(dj).map(|(a, d)| a * (-gb * d).exp()).collect();
            let lin: Vec<f64> = e.iter().zip(dj).map(|(a, d)| a * d).collect();
            let s = proj.fit(&shifted);
            positive(&s, "the shifted Gamma", i)?;
            let l = proj.fit(&lin);
            for p in 0..m {
                let ex = (s[p] / g[p]).ln() / gamma;
                let li = -beta * l[p] / g[p];
                sq += (ex - li) * (ex - li);
                ups_exact.push(ex);
                ups_literal.push(li);
            }
        }
    }
    gamma_process.extend(xv.iter().map(|v| (-gb * v - log_gamma0).exp()));
    let count = (n * kk * m).max(1) as f64;
    Ok(EntropicControls {
        paths: m,
        steps: n,
        marks: kk,
        z,
        ups_exact,
        ups_literal,
        gamma_process,
        jump_gap: (sq / count).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpControlMode {
    /// `phi_k = exp(gamma u_k) - 1` with the exact jump control.
    Exact,
    /// `phi_k = gamma u_k` with the linearized jump control.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaCheck {
    /// Mean over paths of `|Lambda(t_i) - Gamma(t_i)/Gamma(0)|` per node.
    pub node_gaps: Vec<f64>,
    pub max_gap: f64,
}

/// Compares the stochastic exponential of `(gamma Z, phi_k)` with the
/// normalized process `Gamma(t)/Gamma(0)` node by node.
pub fn gamma_exponential_check(
    gamma: f64,
    beta: f64,
    xi: &Payoff,
    bundle: &PathBundle,
    cfg: &RegressionConfig,
    mode: JumpControlMode,
) -> Result<GammaCheck> {
    let c = entropic_controls(gamma, beta, xi, bundle, cfg)?;
    gamma_check_from(&c, gamma, bundle, mode)
}

pub fn gamma_check_from(
    c: &EntropicControls,
    gamma: f64,
    bundle: &PathBundle,
    mode: JumpControlMode,
) -> Result<GammaCheck> {
    let phi_z = c.z.iter().map(|v| gamma * v).collect();
    let phi_jump = match mode {
        JumpControlMode::Exact => c.ups_exact.iter().map(|u| (gamma * u).exp() - 1.0).collect(),
        JumpControlMode::Literal => c.ups_literal.iter().map(|u| gamma * u).collect(),
    };
    let rn = doleans_dade(bundle, &Integrands::new(c.paths, c.steps, c.marks, phi_z, phi_jump)?)?;
    let node_gaps: Vec<f64> = (0..=c.steps)
        .map(|i| {
            let d: Vec<f64> = rn
                .at(i)
                .iter()
                .zip(c.gamma_ratio(i))
                .map(|(a, b)| (a - b).abs())
                .collect();
            stats::mean(&d)
        })
        .collect();
    let max_gap = node_gaps.iter().cloned().fold(0.0, f64::max);
    Ok(GammaCheck { node_gaps, max_gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{build_grid, simulate_paths, JumpMark, LevyModel};

    fn bundle(vol: f64, marks: Vec<JumpMark>, paths: usize) -> PathBundle {
        let model = LevyModel::new(0.0, 0.0, vol, marks).unwrap();
        simulate_paths(&build_grid(1.0, 10).unwrap(), &model, paths, 41).unwrap()
    }

    #[test]
    fn identity_functional() {
        let b = bundle(1.0, vec![JumpMark::new(-0.2, 1.0), JumpMark::new(0.4, 0.5)], 100);
        let f = malliavin_derivative(&Payoff::identity(), &b).unwrap();
        assert!(f.brownian(0.5).iter().all(|v| *v == 1.0));
        assert!(f.jump(0.5, 0).iter().all(|v| (v + 0.2).abs() < 1e-15));
        assert!(f.jump(0.5, 1).iter().all(|v| (v - 0.4).abs() < 1e-15));
        assert!(f.brownian(1.5).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nonlinear_jump_chain_rule() {
        let b = bundle(0.3, vec![JumpMark::new(-0.2, 1.0)], 200);
        let xi = Payoff::exp_affine(1.0, 1.0);
        let f = malliavin_derivative(&xi, &b).unwrap();
        for (d, x) in f.jump(0.0, 0).iter().zip(b.terminal_state()) {
            assert_eq!(*d, (x - 0.2).exp() - x.exp());
            let factored = x.exp() * ((-0.2_f64).exp() - 1.0);
            assert!((d - factored).abs() < 1e-12);
            assert!((d - x.exp() * -0.2).abs() > 1e-3);
        }
    }

    #[test]
    fn constant_functional_has_no_derivative() {
        let b = bundle(0.3, vec![JumpMark::new(-0.2, 1.0)], 50);
        let f = malliavin_derivative(&Payoff::constant(2.0), &b).unwrap();
        assert!(f.brownian(0.0).iter().chain(&f.jump(0.0, 0)).all(|v| *v == 0.0));
    }

    #[test]
    fn brownian_terminal_is_reconstructed_exactly() {
        let b = bundle(1.0, vec![], 5000);
        let co = clark_ocone(&Payoff::identity(), &b, &RegressionConfig::default()).unwrap();
        assert!(co.residual <= 1e-10);
        assert!(co.brownian_integrand.iter().all(|u| *u == 1.0));
    }

    #[test]
    fn zero_scaling_gives_zero_controls() {
        let b = bundle(0.3, vec![JumpMark::new(-0.2, 1.0)], 2000);
        let cfg = RegressionConfig::default();
        let xi = Payoff::clip(Payoff::exp_affine(1.0, 1.0), 0.0, 5.0);
        let c = entropic_controls(1.0, 0.0, &xi, &b, &cfg).unwrap();
        assert!(c.z.iter().chain(&c.ups_exact).chain(&c.ups_literal).all(|v| *v == 0.0));
        let g = gamma_check_from(&c, 1.0, &b, JumpControlMode::Exact).unwrap();
        assert_eq!(g.max_gap, 0.0);
    }

    #[test]
    fn gaussian_controls_are_constant() {
        let b = bundle(0.3, vec![], 20_000);
        let c = entropic_controls(2.0, 1.0, &Payoff::identity(), &b, &RegressionConfig::default()).unwrap();
        for v in &c.z {
            assert!((v + 0.3).abs() < 1e-9);
        }
    }
}
