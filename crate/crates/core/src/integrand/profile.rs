//! Singular profiles h: ℝ → [0, +∞] composed with the determinant.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Profile of the determinant penalty.
///
/// `CustomTable` is piecewise constant left of the last breakpoint and
/// `t^(-s)` from it onwards:
/// `(-∞, b0) → v0, [b0, b1) → v1, …, [b_{k-2}, b_{k-1}) → v_{k-1}, [b_{k-1}, ∞) → t^(-s)`.
/// A `null` value in the table stands for +∞.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum HProfile {
    /// T on t < −T, +∞ on [−T, 0], t^(-s) on t > 0.
    #[serde(rename = "paper-h")]
    Standard {
        #[serde(rename = "T")]
        t: f64,
        s: f64,
    },
    None,
    CustomTable {
        breakpoints: Vec<f64>,
        values: Vec<Option<f64>>,
        s: f64,
    },
}

impl HProfile {
    pub fn standard(t: f64, s: f64) -> Self {
        HProfile::Standard { t, s }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            HProfile::Standard { t, s } => {
                if !(t.is_finite() && *t >= 0.0) {
                    return invalid(format!("h.T must be a nonnegative real, got {t}"));
                }
                if !(s.is_finite() && *s > 0.0) {
                    return invalid(format!("h.s must be positive, got {s}"));
                }
            }
            HProfile::None => {}
            HProfile::CustomTable { breakpoints, values, s } => {
                if breakpoints.is_empty() || breakpoints.len() != values.len() {
                    return invalid("h.table needs as many values as breakpoints (at least one)");
                }
                if breakpoints.iter().any(|b| !b.is_finite()) || breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return invalid("h.table breakpoints must be finite and strictly increasing");
                }
                if *breakpoints.last().unwrap() < 0.0 {
                    return invalid("h.table last breakpoint must be nonnegative (t^-s piece)");
                }
                if values.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return invalid("h.table values must be nonnegative reals or null (+inf)");
                }
                if !(s.is_finite() && *s > 0.0) {
                    return invalid(format!("h.s must be positive, got {s}"));
                }
            }
        }
        Ok(())
    }

    /// h(t), possibly +∞.
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            HProfile::Standard { t: cap, s } => {
                if t < -cap {
                    *cap
                } else if t <= 0.0 {
                    f64::INFINITY
                } else {
                    t.powf(-s)
                }
            }
            HProfile::None => 0.0,
            HProfile::CustomTable { breakpoints, values, s } => {
                let idx = breakpoints.partition_point(|b| *b <= t);
                if idx == breakpoints.len() {
                    if t <= 0.0 {
                        f64::INFINITY
                    } else {
                        t.powf(-s)
                    }
                } else {
                    values[idx].unwrap_or(f64::INFINITY)
                }
            }
        }
    }

    /// (h(t), h'(t)); the derivative is taken piecewise and is zero on the
    /// constant pieces.
    #[inline]
    pub fn eval_with_slope(&self, t: f64) -> (f64, f64) {
        let v = self.eval(t);
        if !v.is_finite() {
            return (v, 0.0);
        }
        let power_piece = match self {
            HProfile::Standard { .. } => t > 0.0,
            HProfile::None => false,
            HProfile::CustomTable { breakpoints, .. } => t >= *breakpoints.last().unwrap(),
        };
        if power_piece {
            let s = self.exponent();
            (v, -s * v / t)
        } else {
            (v, 0.0)
        }
    }

    fn exponent(&self) -> f64 {
        match self {
            HProfile::Standard { s, .. } | HProfile::CustomTable { s, .. } => *s,
            HProfile::None => 0.0,
        }
    }

    /// Constants (γ, δ) with h(t) ≤ δ whenever |t| ≥ γ, when they exist.
    ///
    /// For the standard profile with T > 0 these are γ = 2T and
    /// δ = max{(2T)^(-s), T}. With T = 0 the formula degenerates and γ = 1,
    /// δ = 1 is used instead.
    pub fn growth_window(&self) -> Option<(f64, f64)> {
        match self {
            HProfile::Standard { t, s } => {
                if *t > 0.0 {
                    let gamma = 2.0 * t;
                    Some((gamma, gamma.powf(-s).max(*t)))
                } else {
                    Some((1.0, 1.0))
                }
            }
            HProfile::None => Some((1.0, 0.0)),
            HProfile::CustomTable { breakpoints, values, s } => {
                let reach = breakpoints[0].abs().max(*breakpoints.last().unwrap());
                let gamma = if reach > 0.0 { 2.0 * reach } else { 1.0 };
                let left = values[0]?;
                Some((gamma, left.max(gamma.powf(-s))))
            }
        }
    }
}
