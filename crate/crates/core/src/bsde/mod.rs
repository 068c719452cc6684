//! Backward Euler scheme for the jump BSDE with regression-based conditional
//! expectations.

mod regression;

pub(crate) use regression::centred_tilt;
pub use regression::{polynomial_basis, regress_condexp, Projector, RegressionConfig};

use serde::{Deserialize, Serialize};

use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::market::PathBundle;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    /// Share of the variance of `Y_{i+1}` explained by the basis.
    pub r_squared: f64,
    pub condition: f64,
    pub basis_size: usize,
    pub clamped: usize,
}

/// Grid processes `(Y, Z, Upsilon)` for every path, stored node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution {
    paths: usize,
    steps: usize,
    marks: usize,
    dt: f64,
    y: Vec<f64>,
    z: Vec<f64>,
    ups: Vec<f64>,
    forward: Vec<f64>,
    diagnostics: Vec<StepDiagnostics>,
}

impl BsdeSolution {
    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn mark_count(&self) -> usize {
        self.marks
    }

    pub fn y(&self, node: usize) -> &[f64] {
        &self.y[node * self.paths..(node + 1) * self.paths]
    }

    pub fn z(&self, step: usize) -> &[f64] {
        &self.z[step * self.paths..(step + 1) * self.paths]
    }

    pub fn ups(&self, step: usize, mark: usize) -> &[f64] {
        let o = (step * self.marks + mark) * self.paths;
        &self.ups[o..o + self.paths]
    }

    /// Jump controls of one path at one step.
    pub fn ups_at(&self, step: usize, path: usize, out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.ups[(step * self.marks + k) * self.paths + path];
        }
    }

    pub fn terminal(&self) -> &[f64] {
        self.y(self.steps)
    }

    pub fn y0(&self) -> f64 {
        self.y[0]
    }

    /// Path-wise `Y_N + sum_i g_i dt`. Its sample mean is `Y_0`, because the
    /// fitted values of every regression average to their targets.
    pub fn y0_samples(&self) -> &[f64] {
        &self.forward
    }

    pub fn y0_std_error(&self) -> f64 {
        stats::std_error(&self.forward)
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    pub fn clamp_count(&self) -> usize {
        self.diagnostics.iter().map(|d| d.clamped).sum()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Copy with `Y` at one node shifted by `delta`; used to exercise the
    /// residual diagnostics.
    pub fn with_shifted_node(&self, node: usize, delta: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.y[node * self.paths..(node + 1) * self.paths] {
            *v += delta;
        }
        out
    }
}

pub fn solve_bsde(
    bundle: &PathBundle,
    driver: &Driver,
    terminal: &[f64],
    cfg: &RegressionConfig,
) -> Result<BsdeSolution> {
    cfg.validate()?;
    let m = bundle.paths();
    let n = bundle.steps();
    let kk = bundle.mark_count();
    if terminal.len() != m {
        return Err(Error::InvalidArgument(format!(
            "terminal has {} values for {m} paths",
            terminal.len()
        )));
    }
    if driver.mark_count() != kk {
        return Err(Error::InvalidArgument(format!(
            "driver has {} marks, model has {kk}",
            driver.mark_count()
        )));
    }
    if let Some(p) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "terminal value at path {p} is not finite"
        )));
    }
    let dt = bundle.dt();
    let lambdas = bundle.model().intensities();

    let mut y = vec![0.0; (n + 1) * m];
    let mut z = vec![0.0; n * m];
    let mut ups = vec![0.0; n * kk * m];
    let mut forward = terminal.to_vec();
    let mut diagnostics = Vec::with_capacity(n);
    y[n * m..].copy_from_slice(terminal);

    let mut u = vec![0.0; kk];
    for i in (0..n).rev() {
        let (head, tail) = y.split_at_mut((i + 1) * m);
        let next = &tail[..m];
        let proj = Projector::at_node(bundle, i, cfg)?;
        let yhat = proj.fit(next);
        let resid: Vec<f64> = next.iter().zip(&yhat).map(|(a, b)| a - b).collect();

        let dw = bundle.dw(i);
        let weighted: Vec<f64> = resid.iter().zip(dw).map(|(r, w)| r * w).collect();
        let mut zi = proj.fit(&weighted);
        zi.iter_mut().for_each(|v| *v /= dt);
        let mut ui = Vec::with_capacity(kk);
        for (k, &lam) in lambdas.iter().enumerate() {
            let comp = bundle.compensated_dn(i, k);
            let weighted: Vec<f64> = resid.iter().zip(&comp).map(|(r, c)| r * c).collect();
            let mut v = proj.fit(&weighted);
            v.iter_mut().for_each(|x| *x /= lam * dt);
            ui.push(v);
        }

        let mut clamped = 0;
        let cur = &mut head[i * m..];
        for p in 0..m {
            let zc = zi[p].clamp(-cfg.z_max, cfg.z_max);
            if zc != zi[p] {
                clamped += 1;
                zi[p] = zc;
            }
            for k in 0..kk {
                let v = ui[k][p];
                let vc = v.clamp(-cfg.jump_max, cfg.jump_max);
                if vc != v {
                    clamped += 1;
                    ui[k][p] = vc;
                }
                u[k] = vc;
            }
            let g = driver.value(zc, &u) * dt;
            cur[p] = yhat[p] + g;
            forward[p] += g;
        }
        if let Some(p) = cur.iter().position(|v| !v.is_finite()) {
            return Err(Error::SolverFailure {
                step: Some(i),
                reason: format!("non-finite Y at path {p}"),
            });
        }

        let ss_tot = stats::variance(next);
        let r_squared = if ss_tot > 0.0 {
            1.0 - stats::dot(&resid, &resid) / (m as f64 - 1.0) / ss_tot
        } else {
            1.0
        };
        diagnostics.push(StepDiagnostics {
            step: i,
            r_squared,
            condition: proj.condition(),
            basis_size: proj.dim(),
            clamped,
        });
        z[i * m..(i + 1) * m].copy_from_slice(&zi);
        for (k, v) in ui.into_iter().enumerate() {
            let o = (i * kk + k) * m;
            ups[o..o + m].copy_from_slice(&v);
        }
    }
    diagnostics.reverse();

    Ok(BsdeSolution {
        paths: m,
        steps: n,
        marks: kk,
        dt,
        y,
        z,
        ups,
        forward,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepResidual {
    pub step: usize,
    pub mean: f64,
    pub std_error: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub steps: Vec<StepResidual>,
}

impl ResidualReport {
    pub fn flagged_steps(&self) -> Vec<usize> {
        self.steps.iter().filter(|s| s.flagged).map(|s| s.step).collect()
    }

    pub fn max_abs_mean(&self) -> f64 {
        self.steps.iter().map(|s| s.mean.abs()).fold(0.0, f64::max)
    }
}

/// Replays the one-step identity forward on every path and tests the mean
/// residual per step against three standard errors.
///
/// The residual of a path equals minus its martingale increment up to the
/// projection error, so the standard error pools both variances.
pub fn residual_replay(solution: &BsdeSolution, bundle: &PathBundle, driver: &Driver) -> ResidualReport {
    let m = solution.paths();
    let kk = solution.mark_count();
    let dt = solution.dt();
    let lambdas = bundle.model().intensities();
    let mut u = vec![0.0; kk];
    let mut steps = Vec::with_capacity(solution.steps());
    for i in 0..solution.steps() {
        let (y0, y1, z, dw) = (solution.y(i), solution.y(i + 1), solution.z(i), bundle.dw(i));
        let mut resid = vec![0.0; m];
        let mut mart = vec![0.0; m];
        for p in 0..m {
            solution.ups_at(i, p, &mut u);
            let mut inc = z[p] * dw[p];
            for k in 0..kk {
                inc += u[k] * (bundle.dn(i, k)[p] as f64 - lambdas[k] * dt);
            }
            mart[p] = inc;
            resid[p] = y1[p] - y0[p] + driver.value(z[p], &u) * dt - inc;
        }
        let mean = stats::mean(&resid);
        let std_error = ((stats::variance(&resid) + stats::variance(&mart)) / m as f64).sqrt();
        // round-off floor, relevant only when both sides are essentially zero
        let scale = y0.iter().chain(y1).fold(1.0_f64, |a, v| a.max(v.abs()));
        steps.push(StepResidual {
            step: i,
            mean,
            std_error,
            flagged: mean.abs() > 3.0 * std_error + 1e-12 * scale,
        });
    }
    ResidualReport { steps }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::LinearForm;
    use crate::market::{build_grid, simulate_paths, JumpMark, LevyModel};
    use crate::payoff::Payoff;

    fn desk(paths: usize, steps: usize, marks: Vec<JumpMark>) -> PathBundle {
        let model = LevyModel::new(0.0, 0.1, 0.3, marks).unwrap();
        simulate_paths(&build_grid(1.0, steps).unwrap(), &model, paths, 11).unwrap()
    }

    #[test]
    fn constant_terminal_is_a_martingale() {
        let b = desk(2000, 10, vec![JumpMark::new(-0.2, 1.5)]);
        let d = Driver::zero(&[1.5]).unwrap();
        let s = solve_bsde(&b, &d, &vec![0.7; 2000], &RegressionConfig::default()).unwrap();
        for i in 0..10 {
            assert!(s.y(i).iter().all(|v| (v - 0.7).abs() < 1e-12));
            assert!(s.z(i).iter().all(|v| v.abs() < 1e-12));
            assert!(s.ups(i, 0).iter().all(|v| v.abs() < 1e-12));
        }
        let r = residual_replay(&s, &b, &d);
        assert!(r.max_abs_mean() < 1e-12);
        assert!(r.flagged_steps().is_empty());
    }

    #[test]
    fn brownian_terminal_recovers_unit_control() {
        let model = LevyModel::brownian(0.0, 0.0, 1.0).unwrap();
        let b = simulate_paths(&build_grid(1.0, 20).unwrap(), &model, 100_000, 3).unwrap();
        let d = Driver::zero(&[]).unwrap();
        let cfg = RegressionConfig::default().with_degree(2);
        let s = solve_bsde(&b, &d, &b.terminal_values(&Payoff::identity()), &cfg).unwrap();
        assert!(s.y0().abs() < 3.0 * s.y0_std_error() + 1e-12);
        for i in 0..20 {
            let zbar = stats::mean(s.z(i));
            assert!((zbar - 1.0).abs() < 2e-2, "step {i}: {zbar}");
        }
    }

    #[test]
    fn zero_noise_reduces_to_backward_euler() {
        let model = LevyModel::new(0.5, 1.0, 0.0, vec![]).unwrap();
        let b = simulate_paths(&build_grid(1.0, 16).unwrap(), &model, 500, 5).unwrap();
        let ell = LinearForm::zero(0).with_constant(0.3);
        let d = Driver::quadratic_exponential(1.0, ell, &[]).unwrap();
        let xi = Payoff::exp_affine(1.0, 1.0);
        let s = solve_bsde(&b, &d, &b.terminal_values(&xi), &RegressionConfig::default()).unwrap();
        let mut ode = 1.5_f64.exp();
        for _ in 0..16 {
            ode += 0.3 / 16.0;
        }
        assert!((s.y0() - ode).abs() < 1e-10);
    }

    #[test]
    fn corrupted_node_is_flagged() {
        let b = desk(20_000, 10, vec![]);
        let d = Driver::entropic(2.0, &[]).unwrap();
        let s = solve_bsde(
            &b,
            &d,
            &b.terminal_values(&Payoff::affine(0.0, -1.0)),
            &RegressionConfig::default(),
        )
        .unwrap();
        assert!(residual_replay(&s, &b, &d).flagged_steps().is_empty());
        assert_eq!(
            residual_replay(&s.with_shifted_node(0, 1.0), &b, &d).flagged_steps(),
            vec![0]
        );
        assert_eq!(
            residual_replay(&s.with_shifted_node(4, 1.0), &b, &d).flagged_steps(),
            vec![3, 4]
        );
    }

    #[test]
    fn translation_shifts_y0() {
        let b = desk(20_000, 10, vec![JumpMark::new(-0.2, 1.5)]);
        let d = Driver::entropic(1.0, &[1.5]).unwrap();
        let cfg = RegressionConfig::default();
        let xi = b.terminal_values(&Payoff::affine(0.0, -1.0));
        let shifted: Vec<f64> = xi.iter().map(|v| v + 1.0).collect();
        let a = solve_bsde(&b, &d, &xi, &cfg).unwrap().y0();
        let c = solve_bsde(&b, &d, &shifted, &cfg).unwrap().y0();
        assert!((c - a - 1.0).abs() < 5e-3);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let b = desk(100, 4, vec![JumpMark::new(-0.2, 1.5)]);
        let cfg = RegressionConfig::default();
        assert!(solve_bsde(&b, &Driver::zero(&[]).unwrap(), &[0.0; 100], &cfg).is_err());
        let d = Driver::zero(&[1.5]).unwrap();
        assert!(solve_bsde(&b, &d, &[0.0; 99], &cfg).is_err());
        let mut bad = vec![0.0; 100];
        bad[3] = f64::NAN;
        assert!(solve_bsde(&b, &d, &bad, &cfg).is_err());
    }
}
