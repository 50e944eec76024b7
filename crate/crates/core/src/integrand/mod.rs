//! Evaluable singular integrands W(x, ξ) and their structural checks.
//!
//! The flagship family is the H-form `|ξ|^p + a(x)·h(det ξ)`; two custom
//! forms (`a(x)|ξ|^p` and the double well `a(x)(|ξ|²−1)²`) cover the
//! quadratic and nonconvex test problems. Values live in `[0, +∞]`; an
//! infinite energy is an ordinary `f64::INFINITY`.

mod coefficient;
mod conditions;
mod matrix;
mod profile;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use coefficient::CoefficientField;
pub use conditions::{check_conditions, C1Report, ChatTwo, ConditionReport, ConditionSample};
pub use matrix::{rank_one_det_line, MatrixMN};
pub use profile::HProfile;

pub(crate) use matrix::{cofactor_into, det_square};

use crate::error::{invalid, Result};

/// Shape of the density.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Form {
    /// |ξ|^p + a(x)·h(det ξ); square matrices only.
    HForm,
    /// a(x)·|ξ|^p.
    Power,
    /// a(x)·(|ξ|² − 1)².
    DoubleWell,
}

/// Nondecreasing modulus ω: [0, ∞) → [0, ∞) with ω(0) = 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Modulus {
    Zero,
    /// min(constant·t, cap).
    Lipschitz {
        constant: f64,
        #[serde(default)]
        cap: Option<f64>,
    },
    /// constant·t^exponent.
    Power { constant: f64, exponent: f64 },
    /// `jump` for every t > 0: the modulus of a discontinuous coefficient,
    /// which is not continuous at the origin.
    Step { jump: f64 },
}

impl Modulus {
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            Modulus::Zero => 0.0,
            _ if t == 0.0 => 0.0,
            Modulus::Step { jump } => *jump,
            Modulus::Lipschitz { constant, cap } => {
                let v = constant * t;
                cap.map_or(v, |c| v.min(c))
            }
            Modulus::Power { constant, exponent } => constant * t.powf(*exponent),
        }
    }

    /// Whether ω is continuous at the origin, as (C₁) requires.
    pub fn is_continuous_at_zero(&self) -> bool {
        !matches!(self, Modulus::Step { jump } if *jump > 0.0)
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            Modulus::Zero => true,
            Modulus::Lipschitz { constant, cap } => {
                constant.is_finite() && *constant >= 0.0 && cap.is_none_or(|c| c.is_finite() && c >= 0.0)
            }
            Modulus::Power { constant, exponent } => {
                constant.is_finite() && *constant >= 0.0 && exponent.is_finite() && *exponent > 0.0
            }
            Modulus::Step { jump } => jump.is_finite() && *jump >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            invalid("omega must be nonnegative and nondecreasing with omega(0) = 0")
        }
    }
}

/// A density W(x, ξ) with its declared structural constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrandSpec {
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: f64,
    pub form: Form,
    pub a: CoefficientField,
    #[serde(default = "no_profile")]
    pub h: HProfile,
    /// Declared coercivity constant C in W ≥ C|ξ|^p.
    #[serde(rename = "C")]
    pub coercivity: f64,
    /// Declared growth constant c in W ≤ c(1 + |ξ|^p), if any.
    #[serde(default, rename = "c")]
    pub growth: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub omega: Option<Modulus>,
}

fn no_profile() -> HProfile {
    HProfile::None
}

impl IntegrandSpec {
    /// |ξ|^p + a·h(det ξ) on N×N matrices.
    pub fn h_form(n: usize, p: f64, a: CoefficientField, h: HProfile) -> Self {
        Self {
            m: n,
            n,
            p,
            form: Form::HForm,
            a,
            h,
            coercivity: 1.0,
            growth: None,
            alpha: None,
            beta: None,
            omega: None,
        }
    }

    /// a(x)|ξ|^p; coercive with C = η.
    pub fn power(m: usize, n: usize, p: f64, a: CoefficientField) -> Self {
        let c = a.lower_bound();
        Self {
            m,
            n,
            p,
            form: Form::Power,
            a,
            h: HProfile::None,
            coercivity: c,
            growth: None,
            alpha: None,
            beta: None,
            omega: None,
        }
    }

    /// a(x)(|ξ|²−1)². Declared with p = 4; the well bottoms make it fail
    /// strict coercivity, which `check_conditions` reports.
    pub fn double_well(m: usize, n: usize, a: CoefficientField) -> Self {
        Self {
            m,
            n,
            p: 4.0,
            form: Form::DoubleWell,
            a,
            h: HProfile::None,
            coercivity: 1e-3,
            growth: None,
            alpha: None,
            beta: None,
            omega: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 {
            return invalid("m and N must be positive");
        }
        if !(self.p.is_finite() && self.p >= 1.0) {
            return invalid(format!("p must be a real >= 1, got {}", self.p));
        }
        if self.form == Form::HForm && self.m != self.n {
            return invalid(format!("H-form needs m = N, got m = {}, N = {}", self.m, self.n));
        }
        if !(self.coercivity.is_finite() && self.coercivity > 0.0) {
            return invalid("C must be a positive real");
        }
        for (name, v) in [("c", self.growth), ("alpha", self.alpha), ("beta", self.beta)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    return invalid(format!("{name} must be a positive real when present"));
                }
            }
        }
        self.a.validate(self.n)?;
        self.h.validate()?;
        if let Some(w) = &self.omega {
            w.validate()?;
        }
        Ok(())
    }

    /// Number of matrix entries m·N.
    #[inline]
    pub fn dof_per_point(&self) -> usize {
        self.m * self.n
    }

    pub fn is_x_independent(&self) -> bool {
        self.a.is_constant()
    }

    /// (α, β) for (Ĉ₂): declared values win; otherwise the H-form values
    /// α = γ, β = max{1, δ‖a‖∞}.
    pub fn chat2_constants(&self) -> Option<(f64, f64)> {
        if let (Some(alpha), Some(beta)) = (self.alpha, self.beta) {
            return Some((alpha, beta));
        }
        if self.form != Form::HForm {
            return None;
        }
        let (gamma, delta) = self.h.growth_window()?;
        Some((gamma, 1.0_f64.max(delta * self.a.sup_norm())))
    }

    /// Default modulus of the H-form: (1/η)·sup{|a(x₁) − a(x₂)| : |x₁ − x₂| ≤ t},
    /// bounded above analytically per coefficient kind.
    pub fn default_modulus(&self) -> Modulus {
        let eta = self.a.lower_bound();
        match &self.a {
            _ if self.a.is_constant() => Modulus::Zero,
            CoefficientField::Sinusoidal { amplitude, wavevector, .. } => {
                let k: f64 = wavevector.iter().map(|&k| (k * k) as f64).sum::<f64>().sqrt();
                Modulus::Lipschitz {
                    constant: std::f64::consts::TAU * amplitude.abs() * k / eta,
                    cap: Some(2.0 * amplitude.abs() / eta),
                }
            }
            // the full oscillation is reached at arbitrarily small distances
            _ => Modulus::Step { jump: (self.a.sup_norm() - eta) / eta },
        }
    }

    /// W(x, ξ) from raw row-major entries. Caller guarantees the length.
    #[inline]
    pub fn eval_entries(&self, x: &[f64], e: &[f64]) -> f64 {
        let sq: f64 = e.iter().map(|v| v * v).sum();
        match self.form {
            Form::HForm => {
                let hv = self.h.eval(det_square(e, self.n));
                if hv.is_infinite() {
                    return f64::INFINITY;
                }
                pow_half(sq, self.p) + self.a.eval(x) * hv
            }
            Form::Power => self.a.eval(x) * pow_half(sq, self.p),
            Form::DoubleWell => {
                let d = sq - 1.0;
                self.a.eval(x) * d * d
            }
        }
    }

    /// W(x, ξ) and ∂W/∂ξ (row-major into `grad`). Where W is infinite the
    /// derivative is left at zero.
    #[inline]
    pub fn eval_entries_with_grad(&self, x: &[f64], e: &[f64], grad: &mut [f64]) -> f64 {
        let sq: f64 = e.iter().map(|v| v * v).sum();
        grad.iter_mut().for_each(|g| *g = 0.0);
        match self.form {
            Form::HForm => {
                let n = self.n;
                let (hv, slope) = self.h.eval_with_slope(det_square(e, n));
                if hv.is_infinite() {
                    return f64::INFINITY;
                }
                let a = self.a.eval(x);
                let (np, dnp) = pow_half_with_factor(sq, self.p);
                for (g, v) in grad.iter_mut().zip(e) {
                    *g = dnp * v;
                }
                if slope != 0.0 {
                    let mut cof = [0.0; 16];
                    if n <= 4 {
                        cofactor_into(e, n, &mut cof[..n * n]);
                        for (g, c) in grad.iter_mut().zip(&cof[..n * n]) {
                            *g += a * slope * c;
                        }
                    } else {
                        let mut cof = vec![0.0; n * n];
                        cofactor_into(e, n, &mut cof);
                        for (g, c) in grad.iter_mut().zip(&cof) {
                            *g += a * slope * c;
                        }
                    }
                }
                np + a * hv
            }
            Form::Power => {
                let a = self.a.eval(x);
                let (np, dnp) = pow_half_with_factor(sq, self.p);
                for (g, v) in grad.iter_mut().zip(e) {
                    *g = a * dnp * v;
                }
                a * np
            }
            Form::DoubleWell => {
                let a = self.a.eval(x);
                let d = sq - 1.0;
                for (g, v) in grad.iter_mut().zip(e) {
                    *g = 4.0 * a * d * v;
                }
                a * d * d
            }
        }
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn hash_hex(&self) -> String {
        let json = serde_json::to_vec(self).expect("integrand spec serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// sq^(p/2).
#[inline]
fn pow_half(sq: f64, p: f64) -> f64 {
    if p == 2.0 {
        sq
    } else if sq == 0.0 {
        0.0
    } else {
        sq.powf(0.5 * p)
    }
}

/// (|ξ|^p, p|ξ|^(p−2)) so that ∂|ξ|^p/∂ξ = p|ξ|^(p−2)·ξ.
#[inline]
fn pow_half_with_factor(sq: f64, p: f64) -> (f64, f64) {
    if p == 2.0 {
        (sq, 2.0)
    } else if sq == 0.0 {
        (0.0, 0.0)
    } else {
        let v = sq.powf(0.5 * p);
        (v, p * v / sq)
    }
}

/// W(x, ξ) with dimension checks; +∞ is a value, not an error.
pub fn eval_integrand(spec: &IntegrandSpec, x: &[f64], xi: &MatrixMN) -> Result<f64> {
    if xi.rows() != spec.m || xi.cols() != spec.n {
        return invalid(format!(
            "matrix is {}x{}, integrand expects {}x{}",
            xi.rows(),
            xi.cols(),
            spec.m,
            spec.n
        ));
    }
    if x.len() != spec.n {
        return invalid(format!("point has {} coordinates, integrand expects {}", x.len(), spec.n));
    }
    if spec.form == Form::HForm && !xi.is_square() {
        return invalid("H-form needs a square matrix");
    }
    Ok(spec.eval_entries(x, xi.entries()))
}

/// h(t).
pub fn eval_h(h: &HProfile, t: f64) -> f64 {
    h.eval(t)
}

/// (det ξ, cof ξ).
pub fn det_and_cofactor(xi: &MatrixMN) -> Result<(f64, MatrixMN)> {
    xi.det_and_cofactor()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hform_spec() -> IntegrandSpec {
        IntegrandSpec::h_form(2, 2.0, CoefficientField::constant(1.0), HProfile::standard(1.0, 1.0))
    }

    #[test]
    fn h_form_examples() {
        let spec = hform_spec();
        let x = [0.0, 0.0];
        assert_eq!(eval_integrand(&spec, &x, &MatrixMN::identity(2)).unwrap(), 3.0);
        assert_eq!(eval_integrand(&spec, &x, &MatrixMN::diag(&[1.0, 0.0])).unwrap(), f64::INFINITY);
        assert_eq!(eval_integrand(&spec, &x, &MatrixMN::zeros(2, 2)).unwrap(), f64::INFINITY);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let spec = hform_spec();
        assert!(eval_integrand(&spec, &[0.0, 0.0], &MatrixMN::identity(3)).is_err());
        assert!(eval_integrand(&spec, &[0.0], &MatrixMN::identity(2)).is_err());
    }

    #[test]
    fn chat2_constants_of_unit_example() {
        assert_eq!(hform_spec().chat2_constants(), Some((2.0, 1.0)));
        let mut spec = hform_spec();
        spec.a = CoefficientField::constant(3.0);
        // δ = 1, ‖a‖∞ = 3
        assert_eq!(spec.chat2_constants(), Some((2.0, 3.0)));
    }

    #[test]
    fn analytic_gradient_matches_central_differences() {
        let specs = [
            hform_spec(),
            IntegrandSpec::h_form(
                3,
                3.0,
                CoefficientField::Sinusoidal { mean: 2.0, amplitude: 0.5, wavevector: vec![1, 0, 2], phase: 0.3 },
                HProfile::standard(0.5, 2.0),
            ),
            IntegrandSpec::power(2, 2, 3.0, CoefficientField::constant(2.0)),
            IntegrandSpec::double_well(1, 1, CoefficientField::constant(1.5)),
        ];
        let points: [&[f64]; 4] = [
            &[1.2, 0.3, -0.4, 0.9],
            &[1.1, 0.2, 0.0, -0.3, 0.8, 0.1, 0.2, 0.0, 1.3],
            &[0.4, -0.7, 1.1, 0.2],
            &[0.6],
        ];
        for (spec, e) in specs.iter().zip(points) {
            let x = vec![0.1; spec.n];
            let mut g = vec![0.0; e.len()];
            let v = spec.eval_entries_with_grad(&x, e, &mut g);
            assert!((v - spec.eval_entries(&x, e)).abs() < 1e-12);
            for k in 0..e.len() {
                let step = 1e-6;
                let mut ep = e.to_vec();
                let mut em = e.to_vec();
                ep[k] += step;
                em[k] -= step;
                let fd = (spec.eval_entries(&x, &ep) - spec.eval_entries(&x, &em)) / (2.0 * step);
                assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{:?} entry {k}: {fd} vs {}", spec.form, g[k]);
            }
        }
    }

    #[test]
    fn spec_json_shape() {
        let json = serde_json::to_value(hform_spec()).unwrap();
        assert_eq!(json["form"], "h-form");
        assert_eq!(json["h"]["kind"], "paper-h");
        assert_eq!(json["a"]["kind"], "constant");
        assert_eq!(json["N"], 2);
        let back: IntegrandSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, hform_spec());
        assert_eq!(back.hash_hex(), hform_spec().hash_hex());
        assert_eq!(back.hash_hex().len(), 64);
    }

    #[test]
    fn default_modulus_of_sinusoid() {
        let spec = IntegrandSpec::h_form(
            1,
            2.0,
            CoefficientField::Sinusoidal { mean: 2.0, amplitude: 1.0, wavevector: vec![1], phase: 0.0 },
            HProfile::standard(1.0, 1.0),
        );
        let w = spec.default_modulus();
        assert!((w.eval(0.25) - std::f64::consts::TAU * 0.25).abs() < 1e-12);
        assert_eq!(w.eval(10.0), 2.0);
        assert_eq!(w.eval(0.0), 0.0);
    }
}
