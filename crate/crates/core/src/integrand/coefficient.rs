//! 1-periodic coefficient fields a(x) bounded below by η > 0.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Coefficient field on ℝ^N with unit period in every coordinate.
///
/// Points are reduced to the unit cell with `x - floor(x)` before any
/// evaluation, so a shift by an integer vector is exact whenever `x + e_i`
/// is itself exactly representable (e.g. dyadic sample points).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CoefficientField {
    Constant {
        value: f64,
    },
    /// mean + amplitude · sin(2π k·x + phase), k an integer wave vector.
    Sinusoidal {
        mean: f64,
        amplitude: f64,
        wavevector: Vec<i64>,
        #[serde(default)]
        phase: f64,
    },
    /// Piecewise constant on a uniform grid of the unit cell; `values` is
    /// row-major with the first axis slowest.
    PiecewiseGrid {
        cells: Vec<usize>,
        values: Vec<f64>,
    },
}

#[inline]
fn unit_cell(t: f64) -> f64 {
    t - t.floor()
}

impl CoefficientField {
    pub fn constant(value: f64) -> Self {
        CoefficientField::Constant { value }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            CoefficientField::Constant { value } => {
                if !(value.is_finite() && *value > 0.0) {
                    return invalid(format!("a.value must be positive, got {value}"));
                }
            }
            CoefficientField::Sinusoidal { mean, amplitude, wavevector, phase } => {
                if wavevector.len() != dim {
                    return invalid(format!("a.wavevector needs {dim} integers, got {}", wavevector.len()));
                }
                if !(mean.is_finite() && amplitude.is_finite() && phase.is_finite()) {
                    return invalid("a.mean, a.amplitude, a.phase must be finite");
                }
                if mean - amplitude.abs() <= 0.0 {
                    return invalid(format!(
                        "sinusoidal coefficient must stay positive: mean {mean} - |amplitude| {} <= 0",
                        amplitude.abs()
                    ));
                }
            }
            CoefficientField::PiecewiseGrid { cells, values } => {
                if cells.len() != dim || cells.contains(&0) {
                    return invalid(format!("a.cells needs {dim} positive counts"));
                }
                let total: usize = cells.iter().product();
                if values.len() != total {
                    return invalid(format!("a.values needs {total} entries, got {}", values.len()));
                }
                if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return invalid("a.values must be positive reals");
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            CoefficientField::Constant { value } => *value,
            CoefficientField::Sinusoidal { mean, amplitude, wavevector, phase } => {
                let arg: f64 = x.iter().zip(wavevector).map(|(xi, k)| *k as f64 * unit_cell(*xi)).sum();
                mean + amplitude * (TAU * arg + phase).sin()
            }
            CoefficientField::PiecewiseGrid { cells, values } => {
                let mut idx = 0;
                for (xi, &c) in x.iter().zip(cells) {
                    let cell = ((unit_cell(*xi) * c as f64).floor() as usize).min(c - 1);
                    idx = idx * c + cell;
                }
                values[idx]
            }
        }
    }

    /// Lower bound η.
    pub fn lower_bound(&self) -> f64 {
        match self {
            CoefficientField::Constant { value } => *value,
            CoefficientField::Sinusoidal { mean, amplitude, wavevector, phase } => {
                if wavevector.iter().all(|&k| k == 0) {
                    mean + amplitude * phase.sin()
                } else {
                    mean - amplitude.abs()
                }
            }
            CoefficientField::PiecewiseGrid { values, .. } => values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// ‖a‖_∞.
    pub fn sup_norm(&self) -> f64 {
        match self {
            CoefficientField::Constant { value } => *value,
            CoefficientField::Sinusoidal { mean, amplitude, wavevector, phase } => {
                if wavevector.iter().all(|&k| k == 0) {
                    mean + amplitude * phase.sin()
                } else {
                    mean + amplitude.abs()
                }
            }
            CoefficientField::PiecewiseGrid { values, .. } => values.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            CoefficientField::Constant { .. } => true,
            CoefficientField::Sinusoidal { amplitude, wavevector, .. } => {
                *amplitude == 0.0 || wavevector.iter().all(|&k| k == 0)
            }
            CoefficientField::PiecewiseGrid { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
        }
    }

    /// Number of grid cells per unit period a mesh must be a multiple of so
    /// that element centroids never straddle a discontinuity of a.
    pub fn lattice(&self) -> usize {
        match self {
            CoefficientField::PiecewiseGrid { cells, .. } => cells.iter().copied().fold(1, lcm),
            _ => 1,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}
