//! Sample-based checks of coercivity, periodicity, (C₁), growth and (Ĉ₂).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{det_square, Form, IntegrandSpec};

/// One sampled triple (x₁, x₂, ξ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSample {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct C1Report {
    pub ok: bool,
    /// "coefficient" for the H-form (ω built from a), "integrand" otherwise.
    pub source: String,
    /// Empirical ω on a grid of distances: (t, ω(t)).
    pub envelope: Vec<(f64, f64)>,
    /// Whether the modulus is continuous at 0, as (C₁) requires.
    pub continuous_at_zero: bool,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatTwo {
    pub alpha: f64,
    pub beta: f64,
    /// "declared", "analytic" or "sampled".
    pub source: String,
    pub holds_on_sample: bool,
    pub checked_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub seed: u64,
    pub sample_size: usize,
    pub coercivity_ok: bool,
    /// min W/|ξ|^p over finite samples; compare against C.
    pub worst_coercivity_ratio: f64,
    pub periodicity_ok: bool,
    pub c1: C1Report,
    pub growth_ok: Option<bool>,
    pub chat2: Option<ChatTwo>,
    pub notes: Vec<String>,
    pub samples: Vec<ConditionSample>,
}

const DYADIC: f64 = (1u64 << 20) as f64;
const ENVELOPE_TS: [f64; 9] = [1.0 / 256.0, 1.0 / 64.0, 1.0 / 16.0, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0];

fn dyadic(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let k = rng.random_range((lo * DYADIC) as i64..(hi * DYADIC) as i64);
    k as f64 / DYADIC
}

fn draw_samples(spec: &IntegrandSpec, size: usize, seed: u64) -> Vec<ConditionSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n;
    (0..size)
        .map(|_| {
            let x1: Vec<f64> = (0..n).map(|_| dyadic(&mut rng, -2.0, 2.0)).collect();
            // distances spread over several scales so small-t behavior of ω is probed
            let scale = 0.5f64.powi(rng.random_range(0..12));
            let x2: Vec<f64> = x1.iter().map(|x| x + scale * dyadic(&mut rng, -1.0, 1.0)).collect();
            let amp = [0.25, 1.0, 3.0][rng.random_range(0..3)];
            let xi: Vec<f64> = (0..spec.dof_per_point())
                .map(|_| amp * rng.sample::<f64, _>(StandardNormal))
                .collect();
            ConditionSample { x1, x2, xi }
        })
        .collect()
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}

/// Running-max step function of (distance, oscillation) pairs evaluated on
/// the fixed distance grid.
fn envelope(mut pairs: Vec<(f64, f64)>) -> (Vec<(f64, f64)>, impl Fn(f64) -> f64) {
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut running = 0.0f64;
    let steps: Vec<(f64, f64)> = pairs
        .into_iter()
        .map(|(d, o)| {
            running = running.max(o);
            (d, running)
        })
        .collect();
    let eval = move |t: f64| {
        let idx = steps.partition_point(|(d, _)| *d <= t);
        if idx == 0 {
            0.0
        } else {
            steps[idx - 1].1
        }
    };
    let table = ENVELOPE_TS.iter().map(|&t| (t, eval(t))).collect();
    (table, eval)
}

/// Checks the structural conditions on a seeded sample. Failures are
/// reported in the returned value, never raised.
pub fn check_conditions(spec: &IntegrandSpec, sample_size: usize, seed: u64) -> ConditionReport {
    let samples = draw_samples(spec, sample_size, seed);
    let p = spec.p;
    let mut notes = Vec::new();

    let norm_p = |xi: &[f64]| {
        let sq: f64 = xi.iter().map(|v| v * v).sum();
        if sq == 0.0 {
            0.0
        } else {
            sq.powf(0.5 * p)
        }
    };

    // coercivity
    let mut worst = f64::INFINITY;
    let mut coercivity_ok = true;
    for s in &samples {
        let f = spec.eval_entries(&s.x1, &s.xi);
        let np = norm_p(&s.xi);
        if f.is_finite() && np > 0.0 {
            worst = worst.min(f / np);
            if f < spec.coercivity * np * (1.0 - 1e-12) {
                coercivity_ok = false;
            }
        }
    }
    if !coercivity_ok {
        notes.push(format!("W >= C|xi|^p fails on the sample (C = {}, worst ratio {worst:.6e})", spec.coercivity));
    }

    // periodicity: exact equality under integer shifts
    let mut periodicity_ok = true;
    for s in &samples {
        let base = spec.eval_entries(&s.x1, &s.xi);
        for i in 0..spec.n {
            let mut shifted = s.x1.clone();
            shifted[i] += 1.0;
            if spec.eval_entries(&shifted, &s.xi).to_bits() != base.to_bits() {
                periodicity_ok = false;
            }
        }
    }
    if !periodicity_ok {
        notes.push("W(x + e_i, xi) != W(x, xi) on the sample".to_string());
    }

    // (C₁)
    let eta = spec.a.lower_bound();
    let (source, pairs): (&str, Vec<(f64, f64)>) = if spec.form == Form::HForm {
        let pairs = samples
            .iter()
            .map(|s| (distance(&s.x1, &s.x2), (spec.a.eval(&s.x1) - spec.a.eval(&s.x2)).abs() / eta))
            .collect();
        ("coefficient", pairs)
    } else {
        let pairs = samples
            .iter()
            .filter_map(|s| {
                let f1 = spec.eval_entries(&s.x1, &s.xi);
                let f2 = spec.eval_entries(&s.x2, &s.xi);
                f2.is_finite().then(|| (distance(&s.x1, &s.x2), ((f1 - f2) / (1.0 + f2)).max(0.0)))
            })
            .collect();
        notes.push("omega estimated empirically from the integrand; (C1) membership is not claimed".to_string());
        ("integrand", pairs)
    };
    let (table, omega) = envelope(pairs);
    let mut violations = 0;
    for s in &samples {
        let f1 = spec.eval_entries(&s.x1, &s.xi);
        let f2 = spec.eval_entries(&s.x2, &s.xi);
        if !f2.is_finite() {
            continue;
        }
        let w = omega(distance(&s.x1, &s.x2));
        let rhs = w * (1.0 + f2) + f2;
        if f1 > rhs * (1.0 + 1e-12) + 1e-12 {
            violations += 1;
        }
    }
    let continuous_at_zero = spec.omega.as_ref().unwrap_or(&spec.default_modulus()).is_continuous_at_zero();
    if !continuous_at_zero {
        notes.push("coefficient is discontinuous: omega is not continuous at 0".to_string());
    }
    let c1 = C1Report { ok: violations == 0, source: source.to_string(), envelope: table, continuous_at_zero, violations };

    // growth (only meaningful when declared)
    let growth_ok = spec.growth.map(|c| {
        samples.iter().all(|s| spec.eval_entries(&s.x1, &s.xi) <= c * (1.0 + norm_p(&s.xi)) * (1.0 + 1e-12))
    });
    if growth_ok == Some(false) {
        notes.push("declared p-polynomial growth fails on the sample".to_string());
    }

    // (Ĉ₂)
    let chat2 = if spec.m == spec.n {
        let dets: Vec<f64> = samples.iter().map(|s| det_square(&s.xi, spec.n)).collect();
        let declared = spec.alpha.is_some() && spec.beta.is_some();
        let constants = match spec.chat2_constants() {
            Some((a, b)) => Some((a, b, if declared { "declared" } else { "analytic" })),
            None => {
                let alpha = 1.0;
                let beta = samples
                    .iter()
                    .zip(&dets)
                    .filter(|(_, d)| d.abs() >= alpha)
                    .map(|(s, _)| spec.eval_entries(&s.x1, &s.xi) / (1.0 + norm_p(&s.xi)))
                    .fold(1.0f64, f64::max);
                beta.is_finite().then_some((alpha, beta, "sampled"))
            }
        };
        constants.map(|(alpha, beta, src)| {
            let mut checked = 0;
            let holds = samples.iter().zip(&dets).filter(|(_, d)| d.abs() >= alpha).all(|(s, _)| {
                checked += 1;
                spec.eval_entries(&s.x1, &s.xi) <= beta * (1.0 + norm_p(&s.xi)) * (1.0 + 1e-12)
            });
            ChatTwo { alpha, beta, source: src.to_string(), holds_on_sample: holds, checked_points: checked }
        })
    } else {
        None
    };

    ConditionReport {
        seed,
        sample_size,
        coercivity_ok,
        worst_coercivity_ratio: worst,
        periodicity_ok,
        c1,
        growth_ok,
        chat2,
        notes,
        samples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::{CoefficientField, HProfile};

    fn hform_spec(a: CoefficientField) -> IntegrandSpec {
        IntegrandSpec::h_form(2, 2.0, a, HProfile::standard(1.0, 1.0))
    }

    #[test]
    fn unit_example_constants() {
        let report = check_conditions(&hform_spec(CoefficientField::constant(1.0)), 400, 7);
        let c = report.chat2.as_ref().unwrap();
        assert_eq!((c.alpha, c.beta), (2.0, 1.0));
        assert_eq!(c.source, "analytic");
        assert!(c.holds_on_sample);
        assert!(c.checked_points > 0);
        assert!(report.coercivity_ok);
        assert!(report.periodicity_ok);
        assert!(report.c1.ok);
        assert!(report.c1.envelope.iter().all(|(_, w)| *w == 0.0));
    }

    #[test]
    fn sinusoidal_modulus_is_below_lipschitz_bound() {
        let a = CoefficientField::Sinusoidal { mean: 2.0, amplitude: 1.0, wavevector: vec![1, 0], phase: 0.0 };
        let report = check_conditions(&hform_spec(a), 2000, 11);
        let w = report.c1.envelope.iter().find(|(t, _)| *t == 0.25).unwrap().1;
        assert!(w > 0.0 && w <= std::f64::consts::TAU * 0.25, "omega(0.25) = {w}");
        assert!(report.c1.ok);
        assert!(report.periodicity_ok);
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = hform_spec(CoefficientField::constant(2.0));
        assert_eq!(check_conditions(&spec, 50, 3), check_conditions(&spec, 50, 3));
        assert_ne!(check_conditions(&spec, 50, 3).samples, check_conditions(&spec, 50, 4).samples);
    }

    #[test]
    fn double_well_fails_coercivity_and_is_reported() {
        let spec = IntegrandSpec::double_well(1, 1, CoefficientField::constant(1.0));
        let report = check_conditions(&spec, 500, 1);
        assert!(!report.coercivity_ok);
        assert!(!report.notes.is_empty());
        assert_eq!(report.c1.source, "integrand");
    }

    #[test]
    fn discontinuous_coefficient_flags_modulus() {
        let a = CoefficientField::PiecewiseGrid { cells: vec![2, 1], values: vec![1.0, 4.0] };
        let report = check_conditions(&hform_spec(a), 200, 5);
        assert!(!report.c1.continuous_at_zero);
    }
}
