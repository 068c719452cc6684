//! Time grid, Itô-Lévy state model and simulated path bundles.
//!
//! The state follows the arithmetic jump-diffusion
//! `dX = mu dt + sigma dW + sum_k zeta_k dN_k` with finitely many jump marks,
//! so every integral against the Lévy measure reduces to a finite sum.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::payoff::Payoff;

/// Uniform grid `t_i = i T / N` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if steps == 0 {
            return Err(invalid("step count must be at least 1"));
        }
        Ok(Self { horizon, steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    /// Node `i`, computed as `i T / N` so the last node is exactly `T`.
    pub fn node(&self, i: usize) -> f64 {
        if i == self.steps {
            self.horizon
        } else {
            i as f64 * self.horizon / self.steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|i| self.node(i)).collect()
    }
}

/// Build a uniform grid on `[0, horizon]` with `steps` intervals.
pub fn build_grid(horizon: f64, steps: usize) -> Result<TimeGrid> {
    TimeGrid::new(horizon, steps)
}

/// A jump mark `zeta` with intensity `lambda`; the Lévy measure is
/// `sum_k lambda_k delta_{zeta_k}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpMark {
    pub size: f64,
    pub intensity: f64,
}

impl JumpMark {
    pub fn new(size: f64, intensity: f64) -> Self {
        Self { size, intensity }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyModel {
    x0: f64,
    drift: f64,
    vol: f64,
    marks: Vec<JumpMark>,
}

impl LevyModel {
    pub fn new(x0: f64, drift: f64, vol: f64, marks: Vec<JumpMark>) -> Result<Self> {
        if !x0.is_finite() || !drift.is_finite() {
            return Err(invalid("initial value and drift must be finite"));
        }
        if !(vol.is_finite() && vol >= 0.0) {
            return Err(invalid(format!("volatility must be non-negative, got {vol}")));
        }
        for (k, m) in marks.iter().enumerate() {
            if !m.size.is_finite() || m.size == 0.0 {
                return Err(invalid(format!("jump mark {k} must be finite and nonzero")));
            }
            if !(m.intensity.is_finite() && m.intensity > 0.0) {
                return Err(invalid(format!("jump intensity {k} must be positive")));
            }
            if marks[..k].iter().any(|o| o.size == m.size) {
                return Err(invalid(format!("jump mark {k} duplicates an earlier size")));
            }
        }
        Ok(Self { x0, drift, vol, marks })
    }

    /// Pure diffusion without jumps.
    pub fn brownian(x0: f64, drift: f64, vol: f64) -> Result<Self> {
        Self::new(x0, drift, vol, Vec::new())
    }

    pub fn x0(&self) -> f64 {
        self.x0
    }

    pub fn drift(&self) -> f64 {
        self.drift
    }

    pub fn vol(&self) -> f64 {
        self.vol
    }

    pub fn marks(&self) -> &[JumpMark] {
        &self.marks
    }

    pub fn mark_count(&self) -> usize {
        self.marks.len()
    }

    pub fn intensities(&self) -> Vec<f64> {
        self.marks.iter().map(|m| m.intensity).collect()
    }

    /// `E[X(t)] = x0 + mu t + sum lambda zeta t`.
    pub fn mean_at(&self, t: f64) -> f64 {
        self.x0 + self.drift * t + self.marks.iter().map(|m| m.intensity * m.size).sum::<f64>() * t
    }

    /// `Var[X(t)] = sigma^2 t + sum lambda zeta^2 t`.
    pub fn variance_at(&self, t: f64) -> f64 {
        self.vol * self.vol * t + self.marks.iter().map(|m| m.intensity * m.size * m.size).sum::<f64>() * t
    }
}

/// Words of ChaCha output reserved for each (path, step) pair.
const WORDS_PER_STEP: u128 = 1 << 20;

/// Simulated increments and states. Arrays are step-major: the values of
/// all paths at one step are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    grid: TimeGrid,
    model: LevyModel,
    paths: usize,
    seed: u64,
    dw: Vec<f64>,
    dn: Vec<u32>,
    x: Vec<f64>,
}

/// Simulate `paths` trajectories of the model on the grid.
///
/// Each path draws from its own ChaCha stream and each step starts at a fixed
/// counter offset inside that stream, so adding paths or reading a path in
/// isolation never changes the draws of any other (path, step).
pub fn simulate_paths(grid: &TimeGrid, model: &LevyModel, paths: usize, seed: u64) -> Result<PathBundle> {
    if paths == 0 {
        return Err(invalid("path count must be at least 1"));
    }
    let n = grid.steps();
    let k = model.mark_count();
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let poissons: Vec<Poisson<f64>> = model
        .marks()
        .iter()
        .map(|m| Poisson::new(m.intensity * dt).map_err(|e| invalid(e.to_string())))
        .collect::<Result<_>>()?;

    let rows: Vec<(Vec<f64>, Vec<u32>)> = (0..paths)
        .into_par_iter()
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(m as u64);
            let mut dw_row = vec![0.0; n];
            let mut dn_row = vec![0u32; n * k];
            for i in 0..n {
                rng.set_word_pos(i as u128 * WORDS_PER_STEP);
                let z: f64 = StandardNormal.sample(&mut rng);
                dw_row[i] = z * sqrt_dt;
                for (j, p) in poissons.iter().enumerate() {
                    dn_row[i * k + j] = p.sample(&mut rng) as u32;
                }
            }
            (dw_row, dn_row)
        })
        .collect();

    // transpose to step-major
    let mut dw = vec![0.0; paths * n];
    let mut dn = vec![0u32; paths * n * k];
    for (m, (dw_row, dn_row)) in rows.into_iter().enumerate() {
        for i in 0..n {
            dw[i * paths + m] = dw_row[i];
            for j in 0..k {
                dn[(i * k + j) * paths + m] = dn_row[i * k + j];
            }
        }
    }

    let mut x = vec![0.0; paths * (n + 1)];
    x[..paths].fill(model.x0());
    for i in 0..n {
        let (head, tail) = x.split_at_mut((i + 1) * paths);
        let prev = &head[i * paths..];
        let next = &mut tail[..paths];
        let dwi = &dw[i * paths..(i + 1) * paths];
        for m in 0..paths {
            let mut v = prev[m] + model.drift() * dt + model.vol() * dwi[m];
            for (j, mark) in model.marks().iter().enumerate() {
                v += mark.size * dn[(i * k + j) * paths + m] as f64;
            }
            next[m] = v;
        }
    }

    Ok(PathBundle {
        grid: *grid,
        model: model.clone(),
        paths,
        seed,
        dw,
        dn,
        x,
    })
}

impl PathBundle {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mark_count(&self) -> usize {
        self.model.mark_count()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    /// Brownian increments `W(t_{i+1}) - W(t_i)` over all paths.
    pub fn dw(&self, step: usize) -> &[f64] {
        &self.dw[step * self.paths..(step + 1) * self.paths]
    }

    /// Jump counts of mark `mark` over step `step`.
    pub fn dn(&self, step: usize, mark: usize) -> &[u32] {
        let k = self.mark_count();
        let o = (step * k + mark) * self.paths;
        &self.dn[o..o + self.paths]
    }

    /// Compensated jump increments `dN - lambda dt` of one mark over one step.
    pub fn compensated_dn(&self, step: usize, mark: usize) -> Vec<f64> {
        let comp = self.model.marks()[mark].intensity * self.dt();
        self.dn(step, mark).iter().map(|&c| c as f64 - comp).collect()
    }

    /// State `X(t_i)` over all paths.
    pub fn state(&self, node: usize) -> &[f64] {
        &self.x[node * self.paths..(node + 1) * self.paths]
    }

    pub fn terminal_state(&self) -> &[f64] {
        self.state(self.steps())
    }

    /// Brownian motion `W(t_i)` reconstructed from the increments.
    pub fn brownian_at(&self, node: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.paths];
        for i in 0..node {
            for (acc, d) in w.iter_mut().zip(self.dw(i)) {
                *acc += d;
            }
        }
        w
    }

    /// Cumulative jump counts `N_k(t_i)` of one mark.
    pub fn jump_count_at(&self, node: usize, mark: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.paths];
        for i in 0..node {
            for (acc, &d) in c.iter_mut().zip(self.dn(i, mark)) {
                *acc += d as f64;
            }
        }
        c
    }

    /// Evaluate a terminal payoff `f(X(T))` on every path.
    pub fn terminal_values(&self, payoff: &Payoff) -> Vec<f64> {
        self.terminal_state().iter().map(|&x| payoff.eval(x)).collect()
    }
}

/// Evaluate a payoff on the bundle's terminal states.
pub fn terminal_values(bundle: &PathBundle, payoff: &Payoff) -> Vec<f64> {
    bundle.terminal_values(payoff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats;

    #[test]
    fn grid_nodes_are_exact() {
        let g = build_grid(1.0, 4).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = build_grid(2.0, 1).unwrap();
        assert_eq!(g.nodes(), vec![0.0, 2.0]);
        let g = build_grid(1.0, 50).unwrap();
        assert_eq!(g.dt(), 0.02);
        assert_eq!(g.node(50), 1.0);
        let nodes = g.nodes();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn grid_rejects_bad_arguments() {
        assert!(build_grid(0.0, 4).is_err());
        assert!(build_grid(-1.0, 4).is_err());
        assert!(build_grid(f64::NAN, 4).is_err());
        assert!(build_grid(1.0, 0).is_err());
    }

    #[test]
    fn model_validation() {
        assert!(LevyModel::new(0.0, 0.0, -0.1, vec![]).is_err());
        assert!(LevyModel::new(0.0, 0.0, 0.1, vec![JumpMark::new(0.0, 1.0)]).is_err());
        assert!(LevyModel::new(0.0, 0.0, 0.1, vec![JumpMark::new(0.1, 0.0)]).is_err());
        assert!(LevyModel::new(0.0, 0.0, 0.1, vec![JumpMark::new(0.1, 1.0), JumpMark::new(0.1, 2.0)]).is_err());
    }

    #[test]
    fn deterministic_drift() {
        let g = build_grid(1.0, 10).unwrap();
        let m = LevyModel::brownian(0.0, 1.0, 0.0).unwrap();
        let b = simulate_paths(&g, &m, 64, 3).unwrap();
        for &x in b.terminal_state() {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pure_jump_mean() {
        let g = build_grid(1.0, 20).unwrap();
        let m = LevyModel::new(0.0, 0.0, 0.0, vec![JumpMark::new(0.5, 2.0)]).unwrap();
        let b = simulate_paths(&g, &m, 50_000, 11).unwrap();
        let xt = b.terminal_state();
        let se = stats::std_error(xt);
        assert!((stats::mean(xt) - 1.0).abs() <= 3.0 * se);
    }

    #[test]
    fn brownian_variance() {
        let g = build_grid(1.0, 10).unwrap();
        let m = LevyModel::brownian(0.0, 0.0, 0.2).unwrap();
        let b = simulate_paths(&g, &m, 100_000, 5).unwrap();
        let xt = b.terminal_state();
        let mu = stats::mean(xt);
        let sq: Vec<f64> = xt.iter().map(|x| (x - mu) * (x - mu)).collect();
        let var = stats::variance(xt);
        let se = stats::std_error(&sq);
        assert!((var - 0.04).abs() <= 3.0 * se, "var {var} se {se}");
    }

    #[test]
    fn regeneration_is_bit_identical() {
        let g = build_grid(1.0, 8).unwrap();
        let m = LevyModel::new(0.1, 0.2, 0.3, vec![JumpMark::new(-0.2, 1.5)]).unwrap();
        let a = simulate_paths(&g, &m, 500, 99).unwrap();
        let b = simulate_paths(&g, &m, 500, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate_paths(&g, &m, 500, 100).unwrap();
        assert_ne!(a.terminal_state(), c.terminal_state());
    }

    #[test]
    fn more_paths_extend_existing_ones() {
        let g = build_grid(1.0, 8).unwrap();
        let m = LevyModel::new(0.0, 0.0, 0.3, vec![JumpMark::new(-0.2, 1.5)]).unwrap();
        let small = simulate_paths(&g, &m, 100, 7).unwrap();
        let large = simulate_paths(&g, &m, 300, 7).unwrap();
        for i in 0..g.steps() {
            assert_eq!(small.dw(i), &large.dw(i)[..100]);
            assert_eq!(small.dn(i, 0), &large.dn(i, 0)[..100]);
        }
        assert_eq!(small.terminal_state(), &large.terminal_state()[..100]);
    }

    #[test]
    fn brownian_increment_mean_near_zero() {
        let g = build_grid(1.0, 5).unwrap();
        let m = LevyModel::brownian(0.0, 0.0, 1.0).unwrap();
        let b = simulate_paths(&g, &m, 20_000, 1).unwrap();
        for i in 0..5 {
            let d = b.dw(i);
            assert!(stats::mean(d).abs() <= 5.0 * stats::std_error(d));
        }
    }
}
