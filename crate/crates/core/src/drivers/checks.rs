//! Sampled validators for the growth, local Lipschitz and homogeneity
//! conditions on a generator. These are reports, not proofs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Driver;

/// Symmetric sampling box `|y| <= y, |z| <= z, |upsilon_k| <= ups`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub y: f64,
    pub z: f64,
    pub ups: f64,
}

impl SampleBox {
    pub fn new(y: f64, z: f64, ups: f64) -> Self {
        Self { y, z, ups }
    }

    fn draw(&self, rng: &mut ChaCha8Rng, marks: usize) -> ControlPoint {
        let mut u = |b: f64| if b > 0.0 { rng.random_range(-b..=b) } else { 0.0 };
        ControlPoint {
            y: u(self.y),
            z: u(self.z),
            ups: (0..marks).map(|_| u(self.ups)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub y: f64,
    pub z: f64,
    pub ups: Vec<f64>,
}

/// Parameters `(alpha, beta, ell)` of the two-sided growth envelope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthBound {
    pub alpha: f64,
    pub beta: f64,
    pub ell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub samples: usize,
    pub violations: usize,
    /// Smallest distance to either side of the envelope; negative when violated.
    pub worst_margin: f64,
}

/// `j_alpha(u) = (e^{alpha u} - 1 - alpha u) / alpha`
fn j_alpha(alpha: f64, u: f64) -> f64 {
    ((alpha * u).exp() - 1.0 - alpha * u) / alpha
}

/// Count sampled points where `g` leaves the envelope
/// `+-(ell + beta|y| + alpha/2 z^2) + sum_k lambda_k j_alpha(+-u_k)`.
pub fn check_growth_bound(
    driver: &Driver,
    bound: &GrowthBound,
    sampler: &SampleBox,
    n_samples: usize,
    seed: u64,
) -> GrowthReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lam = driver.intensities();
    let mut violations = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..n_samples {
        let p = sampler.draw(&mut rng, lam.len());
        let g = driver.value_at(0.0, p.y, p.z, &p.ups);
        let base = bound.ell + bound.beta * p.y.abs() + 0.5 * bound.alpha * p.z * p.z;
        let mut up = base;
        let mut lo = -base;
        for (u, l) in p.ups.iter().zip(lam) {
            up += l * j_alpha(bound.alpha, *u);
            lo -= l * j_alpha(bound.alpha, -u);
        }
        let margin = (up - g).min(g - lo);
        let slack = 1e-12 * (1.0 + g.abs());
        if margin < -slack {
            violations += 1;
        }
        worst = worst.min(margin);
    }
    GrowthReport {
        samples: n_samples,
        violations,
        worst_margin: worst,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// Smallest constant making the local Lipschitz inequality (with its
    /// `(1 + |z| + |z'| + |u| + |u'|)` weight on `|z - z'|`) hold on all pairs.
    pub k_estimate: f64,
    /// Plain ratio `|g - g'| / (|y - y'| + |z - z'| + |u - u'|)`, without the
    /// weight on the z increment.
    pub plain_ratio: f64,
    pub witness: Option<(ControlPoint, ControlPoint)>,
    pub blow_up: bool,
}

fn l2_nu(v: impl Iterator<Item = f64>, lam: &[f64]) -> f64 {
    v.zip(lam).map(|(x, l)| x * x * l).sum::<f64>().sqrt()
}

/// Estimate the local Lipschitz constant `K_M` on pairs with
/// `|y|, |u|_inf <= bound`.
///
/// Each coordinate group (y, z, u) of the second point is redrawn or shared
/// with the first point with equal probability, so single-group increments
/// are sampled as well as joint ones.
pub fn check_local_lipschitz(
    driver: &Driver,
    bound: f64,
    sampler: &SampleBox,
    n_pairs: usize,
    seed: u64,
) -> LipschitzReport {
    let boxed = SampleBox::new(sampler.y.min(bound), sampler.z, sampler.ups.min(bound));
    let lam = driver.intensities();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = 0.0_f64;
    let mut plain = 0.0_f64;
    let mut witness = None;
    for _ in 0..n_pairs {
        let p = boxed.draw(&mut rng, lam.len());
        let mut q = boxed.draw(&mut rng, lam.len());
        if rng.random_bool(0.5) {
            q.y = p.y;
        }
        if rng.random_bool(0.5) {
            q.z = p.z;
        }
        if rng.random_bool(0.5) {
            q.ups = p.ups.clone();
        }
        let dg = (driver.value_at(0.0, p.y, p.z, &p.ups) - driver.value_at(0.0, q.y, q.z, &q.ups)).abs();
        let du = l2_nu(p.ups.iter().zip(&q.ups).map(|(a, b)| a - b), lam);
        let dy = (p.y - q.y).abs();
        let dz = (p.z - q.z).abs();
        let weight =
            1.0 + p.z.abs() + q.z.abs() + l2_nu(p.ups.iter().copied(), lam) + l2_nu(q.ups.iter().copied(), lam);
        let denom = dy + du + weight * dz;
        if denom > 0.0 {
            let r = dg / denom;
            if r > best {
                best = r;
                witness = Some((p.clone(), q.clone()));
            }
        }
        let plain_denom = dy + dz + du;
        if plain_denom > 0.0 {
            plain = plain.max(dg / plain_denom);
        }
    }
    LipschitzReport {
        k_estimate: best,
        plain_ratio: plain,
        witness,
        blow_up: !best.is_finite(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogeneityReport {
    /// `(scale, max |g(c z, c u) - c g(z, u)|)`
    pub residuals: Vec<(f64, f64)>,
    pub pass: bool,
}

/// Largest residual allowed for a positively homogeneous generator.
pub const HOMOGENEITY_TOL: f64 = 1e-12;

pub fn check_positive_homogeneity(
    driver: &Driver,
    sampler: &SampleBox,
    scales: &[f64],
    n_samples: usize,
    seed: u64,
) -> HomogeneityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let marks = driver.mark_count();
    let points: Vec<ControlPoint> = (0..n_samples).map(|_| sampler.draw(&mut rng, marks)).collect();
    let residuals: Vec<(f64, f64)> = scales
        .iter()
        .map(|&c| {
            let worst = points
                .iter()
                .map(|p| {
                    let scaled: Vec<f64> = p.ups.iter().map(|u| c * u).collect();
                    (driver.value(c * p.z, &scaled) - c * driver.value(p.z, &p.ups)).abs()
                })
                .fold(0.0, f64::max);
            (c, worst)
        })
        .collect();
    let pass = residuals.iter().all(|(_, r)| *r <= HOMOGENEITY_TOL);
    HomogeneityReport { residuals, pass }
}
