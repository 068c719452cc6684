//! Terminal functionals `xi = f(X(T))` from a small closed family.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest polynomial degree admitted in the family.
pub const MAX_POLY_DEGREE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payoff {
    /// `a + b x`
    Affine { a: f64, b: f64 },
    /// `a exp(b x)`
    ExpAffine { a: f64, b: f64 },
    /// `sum_j coeffs[j] x^j`, degree at most four.
    Poly { coeffs: Vec<f64> },
    /// `min(max(inner, lo), hi)`
    Clip { inner: Box<Payoff>, lo: f64, hi: f64 },
    /// `factor * inner`
    Scaled { factor: f64, inner: Box<Payoff> },
    /// Sum of sub-positions; the parts are the position's decomposition.
    Sum { parts: Vec<Payoff> },
}

impl Payoff {
    pub fn constant(m: f64) -> Self {
        Payoff::Affine { a: m, b: 0.0 }
    }

    pub fn identity() -> Self {
        Payoff::Affine { a: 0.0, b: 1.0 }
    }

    pub fn affine(a: f64, b: f64) -> Self {
        Payoff::Affine { a, b }
    }

    pub fn exp_affine(a: f64, b: f64) -> Self {
        Payoff::ExpAffine { a, b }
    }

    pub fn poly(coeffs: Vec<f64>) -> Result<Self> {
        let p = Payoff::Poly { coeffs };
        p.validate()?;
        Ok(p)
    }

    pub fn clip(inner: Payoff, lo: f64, hi: f64) -> Self {
        Payoff::Clip {
            inner: Box::new(inner),
            lo,
            hi,
        }
    }

    pub fn scaled(self, factor: f64) -> Self {
        Payoff::Scaled {
            factor,
            inner: Box::new(self),
        }
    }

    /// Portfolio with an attached decomposition; evaluates as the ordered
    /// sum of its parts, so the decomposition adds up exactly on every path.
    pub fn portfolio(parts: Vec<Payoff>) -> Self {
        Payoff::Sum { parts }
    }

    /// `self + factor * direction`
    pub fn perturbed(&self, direction: &Payoff, factor: f64) -> Self {
        Payoff::Sum {
            parts: vec![self.clone(), direction.clone().scaled(factor)],
        }
    }

    pub fn plus_constant(&self, m: f64) -> Self {
        Payoff::Sum {
            parts: vec![self.clone(), Payoff::constant(m)],
        }
    }

    pub fn decomposition(&self) -> Option<&[Payoff]> {
        match self {
            Payoff::Sum { parts } => Some(parts),
            _ => None,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Payoff::Affine { a, b } => a + b * x,
            Payoff::ExpAffine { a, b } => a * (b * x).exp(),
            Payoff::Poly { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
            Payoff::Clip { inner, lo, hi } => inner.eval(x).max(*lo).min(*hi),
            Payoff::Scaled { factor, inner } => factor * inner.eval(x),
            Payoff::Sum { parts } => parts.iter().map(|p| p.eval(x)).sum(),
        }
    }

    /// Almost-everywhere derivative `f'(x)`; clipped payoffs have derivative
    /// zero outside the open band `(lo, hi)`.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Payoff::Affine { b, .. } => *b,
            Payoff::ExpAffine { a, b } => a * b * (b * x).exp(),
            Payoff::Poly { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (j, c)| acc * x + j as f64 * c),
            Payoff::Clip { inner, lo, hi } => {
                let v = inner.eval(x);
                if v > *lo && v < *hi {
                    inner.derivative(x)
                } else {
                    0.0
                }
            }
            Payoff::Scaled { factor, inner } => factor * inner.derivative(x),
            Payoff::Sum { parts } => parts.iter().map(|p| p.derivative(x)).sum(),
        }
    }

    /// Check that the payoff lies inside the supported family.
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            Payoff::Affine { a, b } | Payoff::ExpAffine { a, b } => {
                if !finite(&[*a, *b]) {
                    return Err(Error::UnsupportedPayoff("non-finite coefficient".into()));
                }
            }
            Payoff::Poly { coeffs } => {
                if coeffs.len() > MAX_POLY_DEGREE + 1 {
                    return Err(Error::UnsupportedPayoff(format!(
                        "polynomial degree {} exceeds {MAX_POLY_DEGREE}",
                        coeffs.len() - 1
                    )));
                }
                if !finite(coeffs) {
                    return Err(Error::UnsupportedPayoff("non-finite coefficient".into()));
                }
            }
            Payoff::Clip { inner, lo, hi } => {
                if lo.is_nan() || hi.is_nan() || lo > hi {
                    return Err(Error::UnsupportedPayoff(format!("clip band [{lo}, {hi}] is empty")));
                }
                inner.validate()?;
            }
            Payoff::Scaled { factor, inner } => {
                if !factor.is_finite() {
                    return Err(Error::UnsupportedPayoff("non-finite scale".into()));
                }
                inner.validate()?;
            }
            Payoff::Sum { parts } => {
                if parts.is_empty() {
                    return Err(Error::UnsupportedPayoff("empty decomposition".into()));
                }
                for p in parts {
                    p.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Whether the functional is bounded whatever the state.
    pub fn is_bounded(&self) -> bool {
        match self {
            Payoff::Affine { b, .. } => *b == 0.0,
            Payoff::ExpAffine { a, b } => *a == 0.0 || *b == 0.0,
            Payoff::Poly { coeffs } => coeffs.iter().skip(1).all(|c| *c == 0.0),
            Payoff::Clip { lo, hi, .. } => lo.is_finite() && hi.is_finite(),
            Payoff::Scaled { factor, inner } => *factor == 0.0 || inner.is_bounded(),
            Payoff::Sum { parts } => parts.iter().all(Payoff::is_bounded),
        }
    }

    /// Coefficients in the monomial basis when the payoff is polynomial.
    pub fn as_polynomial(&self) -> Option<[f64; MAX_POLY_DEGREE + 1]> {
        let mut out = [0.0; MAX_POLY_DEGREE + 1];
        match self {
            Payoff::Affine { a, b } => {
                out[0] = *a;
                out[1] = *b;
            }
            Payoff::Poly { coeffs } => {
                if coeffs.len() > out.len() {
                    return None;
                }
                out[..coeffs.len()].copy_from_slice(coeffs);
            }
            Payoff::Scaled { factor, inner } => {
                let c = inner.as_polynomial()?;
                for (o, v) in out.iter_mut().zip(c) {
                    *o = factor * v;
                }
            }
            Payoff::Sum { parts } => {
                for p in parts {
                    let c = p.as_polynomial()?;
                    for (o, v) in out.iter_mut().zip(c) {
                        *o += v;
                    }
                }
            }
            Payoff::ExpAffine { .. } | Payoff::Clip { .. } => return None,
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_family_examples() {
        assert_eq!(Payoff::identity().eval(1.3), 1.3);
        assert_eq!(Payoff::exp_affine(1.0, 1.0).eval(0.0), 1.0);
        assert_eq!(Payoff::clip(Payoff::identity(), -1.0, 1.0).eval(2.7), 1.0);
    }

    #[test]
    fn polynomial_and_derivative() {
        let p = Payoff::poly(vec![1.0, -2.0, 0.5, 0.0, 0.25]).unwrap();
        let x = 1.7_f64;
        let f = 1.0 - 2.0 * x + 0.5 * x * x + 0.25 * x.powi(4);
        let df = -2.0 + x + x.powi(3);
        assert!((p.eval(x) - f).abs() < 1e-12);
        assert!((p.derivative(x) - df).abs() < 1e-12);
    }

    #[test]
    fn degree_five_rejected() {
        assert!(matches!(Payoff::poly(vec![0.0; 6]), Err(Error::UnsupportedPayoff(_))));
    }

    #[test]
    fn clip_derivative_vanishes_outside_band() {
        let c = Payoff::clip(Payoff::exp_affine(1.0, 1.0), 0.0, 5.0);
        assert_eq!(c.derivative(2.0), 0.0);
        assert!((c.derivative(0.5) - 0.5_f64.exp()).abs() < 1e-15);
        assert!(c.is_bounded());
        assert!(!Payoff::identity().is_bounded());
    }

    #[test]
    fn polynomial_view_of_sums() {
        let xi = Payoff::portfolio(vec![Payoff::affine(0.1, 0.5), Payoff::affine(-0.2, 0.5)]);
        let c = xi.as_polynomial().unwrap();
        assert!((c[0] + 0.1).abs() < 1e-15 && (c[1] - 1.0).abs() < 1e-15);
        assert!(Payoff::clip(Payoff::identity(), 0.0, 1.0).as_polynomial().is_none());
    }

    proptest! {
        #[test]
        fn decomposition_sums_exactly(
            x in -5.0f64..5.0,
            a in proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0), 1..5),
        ) {
            let parts: Vec<Payoff> = a.iter().map(|&(p, q)| Payoff::affine(p, q)).collect();
            let xi = Payoff::portfolio(parts.clone());
            let direct: f64 = parts.iter().map(|p| p.eval(x)).sum();
            prop_assert_eq!(xi.eval(x), direct);
        }
    }
}
