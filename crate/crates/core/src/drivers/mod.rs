//! BSDE generators `g(t, y, z, upsilon)` with exact partial derivatives.
//!
//! Jump controls are vectors `upsilon[k]`, one entry per jump mark, and the
//! integral against the Lévy measure is `sum_k lambda_k (...)`. Jump partials
//! follow the per-mark density convention: `dups(k)` is the derivative of the
//! integrand at mark `k`, so `dg/dupsilon_k = lambda_k * dups(k)`.

mod checks;

pub use checks::{
    check_growth_bound, check_local_lipschitz, check_positive_homogeneity, ControlPoint, GrowthBound, GrowthReport,
    HomogeneityReport, LipschitzReport, SampleBox,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverFamily {
    QuadraticExponential,
    Entropic,
    Sublinear,
}

/// `constant + z_coef * z + sum_k jumps[k] * upsilon_k * lambda_k`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearForm {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub z: f64,
    #[serde(default)]
    pub jumps: Vec<f64>,
}

impl LinearForm {
    pub fn new(z: f64, jumps: Vec<f64>) -> Self {
        Self {
            constant: 0.0,
            z,
            jumps,
        }
    }

    pub fn zero(marks: usize) -> Self {
        Self::new(0.0, vec![0.0; marks])
    }

    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    fn eval(&self, z: f64, ups: &[f64], intensities: &[f64]) -> f64 {
        let mut v = self.constant + self.z * z;
        for ((b, u), l) in self.jumps.iter().zip(ups).zip(intensities) {
            v += b * u * l;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Driver {
    family: DriverFamily,
    alpha: f64,
    ell: LinearForm,
    forms: Vec<LinearForm>,
    intensities: Vec<f64>,
}

fn check_intensities(intensities: &[f64]) -> Result<()> {
    if intensities.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(invalid("jump intensities must be positive"));
    }
    Ok(())
}

impl Driver {
    /// `ell(z, u) + alpha/2 z^2 + (1/alpha) sum_k lambda_k (e^{alpha u_k} - 1 - alpha u_k)`
    pub fn quadratic_exponential(alpha: f64, ell: LinearForm, intensities: &[f64]) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        check_intensities(intensities)?;
        if ell.jumps.len() != intensities.len() {
            return Err(invalid(format!(
                "linear form has {} jump coefficients for {} marks",
                ell.jumps.len(),
                intensities.len()
            )));
        }
        if !(ell.constant.is_finite() && ell.z.is_finite() && ell.jumps.iter().all(|b| b.is_finite())) {
            return Err(invalid("linear form coefficients must be finite"));
        }
        Ok(Self {
            family: DriverFamily::QuadraticExponential,
            alpha,
            ell,
            forms: Vec::new(),
            intensities: intensities.to_vec(),
        })
    }

    /// The generator of the dynamic entropic risk measure with risk aversion
    /// `gamma`: the quadratic-exponential generator with `alpha = gamma` and
    /// `ell = 0`.
    pub fn entropic(gamma: f64, intensities: &[f64]) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(invalid(format!("gamma must be positive, got {gamma}")));
        }
        let mut d = Self::quadratic_exponential(gamma, LinearForm::zero(intensities.len()), intensities)?;
        d.family = DriverFamily::Entropic;
        Ok(d)
    }

    /// `max_j (a_j z + sum_k b_jk u_k lambda_k)`; ties resolve to the lowest index.
    pub fn sublinear(forms: Vec<LinearForm>, intensities: &[f64]) -> Result<Self> {
        if forms.is_empty() {
            return Err(invalid("sublinear driver needs at least one linear form"));
        }
        check_intensities(intensities)?;
        for (j, f) in forms.iter().enumerate() {
            if f.constant != 0.0 {
                return Err(invalid(format!("form {j} has a constant term")));
            }
            if f.jumps.len() != intensities.len() {
                return Err(invalid(format!(
                    "form {j} has {} jump coefficients for {} marks",
                    f.jumps.len(),
                    intensities.len()
                )));
            }
            if !f.z.is_finite() {
                return Err(invalid(format!("form {j} has a non-finite z coefficient")));
            }
            if let Some(b) = f.jumps.iter().find(|b| !(b.is_finite() && **b > -1.0)) {
                return Err(invalid(format!("form {j} jump coefficient {b} must exceed -1")));
            }
        }
        Ok(Self {
            family: DriverFamily::Sublinear,
            alpha: 0.0,
            ell: LinearForm::zero(intensities.len()),
            forms,
            intensities: intensities.to_vec(),
        })
    }

    /// `g = 0`, as the sublinear driver with a single zero form.
    pub fn zero(intensities: &[f64]) -> Result<Self> {
        Self::sublinear(vec![LinearForm::zero(intensities.len())], intensities)
    }

    pub fn family(&self) -> DriverFamily {
        self.family
    }

    pub fn mark_count(&self) -> usize {
        self.intensities.len()
    }

    pub fn intensities(&self) -> &[f64] {
        &self.intensities
    }

    /// Quadratic growth parameter (`gamma` for the entropic family).
    pub fn alpha(&self) -> Option<f64> {
        match self.family {
            DriverFamily::Sublinear => None,
            _ => Some(self.alpha),
        }
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.family {
            DriverFamily::Entropic => Some(self.alpha),
            _ => None,
        }
    }

    pub fn linear_part(&self) -> &LinearForm {
        &self.ell
    }

    pub fn forms(&self) -> &[LinearForm] {
        &self.forms
    }

    pub fn convex_in_controls(&self) -> bool {
        true
    }

    pub fn positively_homogeneous(&self) -> bool {
        self.family == DriverFamily::Sublinear
    }

    pub fn independent_of_y(&self) -> bool {
        true
    }

    fn active_form(&self, z: f64, ups: &[f64]) -> usize {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (j, f) in self.forms.iter().enumerate() {
            let v = f.eval(z, ups, &self.intensities);
            if v > best_v {
                best = j;
                best_v = v;
            }
        }
        best
    }

    /// `g(z, upsilon)`; the generators here depend on neither `t` nor `y`.
    pub fn value(&self, z: f64, ups: &[f64]) -> f64 {
        match self.family {
            DriverFamily::Sublinear => {
                let j = self.active_form(z, ups);
                self.forms[j].eval(z, ups, &self.intensities)
            }
            _ => {
                let a = self.alpha;
                let mut v = self.ell.eval(z, ups, &self.intensities) + 0.5 * a * z * z;
                for (u, l) in ups.iter().zip(&self.intensities) {
                    v += l * ((a * u).exp() - 1.0 - a * u) / a;
                }
                v
            }
        }
    }

    /// Full signature `g(t, y, z, upsilon)`.
    pub fn value_at(&self, _t: f64, _y: f64, z: f64, ups: &[f64]) -> f64 {
        self.value(z, ups)
    }

    pub fn dz(&self, z: f64, ups: &[f64]) -> f64 {
        match self.family {
            DriverFamily::Sublinear => self.forms[self.active_form(z, ups)].z,
            _ => self.ell.z + self.alpha * z,
        }
    }

    /// Density partial at mark `k`; `e^{gamma u_k} - 1` for the entropic family.
    pub fn dups(&self, z: f64, ups: &[f64], k: usize) -> f64 {
        match self.family {
            DriverFamily::Sublinear => self.forms[self.active_form(z, ups)].jumps[k],
            _ => self.ell.jumps[k] + (self.alpha * ups[k]).exp() - 1.0,
        }
    }

    /// All density partials at once.
    pub fn jump_gradient(&self, z: f64, ups: &[f64], out: &mut [f64]) {
        match self.family {
            DriverFamily::Sublinear => {
                let f = &self.forms[self.active_form(z, ups)];
                out.copy_from_slice(&f.jumps);
            }
            _ => {
                for k in 0..out.len() {
                    out[k] = self.ell.jumps[k] + (self.alpha * ups[k]).exp() - 1.0;
                }
            }
        }
    }

    /// The entropic generator with the jump integrand written as
    /// `(1/gamma)(e^{u} - gamma u - 1)`. Kept only to compare against the
    /// canonical form; `None` for other families.
    pub fn entropic_literal_value(&self, z: f64, ups: &[f64]) -> Option<f64> {
        let g = self.gamma()?;
        let mut v = 0.5 * g * z * z;
        for (u, l) in ups.iter().zip(&self.intensities) {
            v += l * (u.exp() - g * u - 1.0) / g;
        }
        Some(v)
    }
}

pub fn make_qexp_driver(alpha: f64, ell: LinearForm, intensities: &[f64]) -> Result<Driver> {
    Driver::quadratic_exponential(alpha, ell, intensities)
}

pub fn make_entropic_driver(gamma: f64, intensities: &[f64]) -> Result<Driver> {
    Driver::entropic(gamma, intensities)
}

pub fn make_sublinear_driver(forms: Vec<LinearForm>, intensities: &[f64]) -> Result<Driver> {
    Driver::sublinear(forms, intensities)
}
