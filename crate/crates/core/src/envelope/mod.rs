//! Upper bounds for the unit-cell infimum Zf(x, ξ) = inf ∫_Y f(x, ξ + ∇φ)
//! over zero-boundary piecewise-affine φ, with x frozen.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::descent::{multistart, standard_starts, DescentOptions, Density, FrozenDensity, Problem, SliceDensity};
use crate::error::{invalid, Error, Result};
use crate::integrand::{eval_h, Form, IntegrandSpec, MatrixMN};
use crate::laminate::{det_target_laminate, fmt_num, laminate_field_build, DEFAULT_MAX_DEPTH};
use crate::mesh::{CellMesh, DisplacementField, FieldExport};

/// Best field found for Zf(x, ξ) and how it was obtained.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvelopeEstimate {
    pub x: Vec<f64>,
    pub xi: MatrixMN,
    pub value: f64,
    pub mesh_n: usize,
    pub starts: usize,
    pub best_start: usize,
    /// Final energy reached from each start, in start order.
    pub start_energies: Vec<f64>,
    pub converged: bool,
    /// (mesh-n, value) per refinement level; a single entry without refinement.
    pub chain: Vec<(usize, f64)>,
    pub diagnostics: Vec<String>,
    #[serde(skip)]
    pub mesh: Option<CellMesh>,
    #[serde(skip)]
    pub field: Option<DisplacementField>,
}

impl EnvelopeEstimate {
    pub fn field_export(&self) -> Option<FieldExport> {
        Some(FieldExport::new(self.mesh.as_ref()?, self.field.as_ref()?))
    }

    /// Last refinement decrement, the practical error indicator.
    pub fn last_decrement(&self) -> f64 {
        match self.chain.len() {
            0 | 1 => 0.0,
            n => self.chain[n - 2].1 - self.chain[n - 1].1,
        }
    }
}

/// Options shared by the envelope routines.
#[derive(Debug, Clone)]
pub struct EnvelopeOptions {
    pub descent: DescentOptions,
    /// Add the growth-certificate laminate as a start when it applies.
    pub laminate_start: bool,
    pub max_depth: usize,
}

impl Default for EnvelopeOptions {
    fn default() -> Self {
        Self { descent: DescentOptions::default(), laminate_start: true, max_depth: DEFAULT_MAX_DEPTH }
    }
}

fn check_dims(spec: &IntegrandSpec, x: &[f64], xi: &MatrixMN) -> Result<()> {
    if x.len() != spec.n {
        return invalid(format!("x has {} coordinates, spec needs {}", x.len(), spec.n));
    }
    if xi.rows() != spec.m || xi.cols() != spec.n {
        return invalid(format!("xi is {}x{}, spec needs {}x{}", xi.rows(), xi.cols(), spec.m, spec.n));
    }
    Ok(())
}

/// ∫_Y f(x, ξ + ∇φ) with x frozen, summed over elements in order.
pub fn cell_energy(spec: &IntegrandSpec, x: &[f64], xi: &MatrixMN, mesh: &CellMesh, field: &DisplacementField) -> Result<f64> {
    check_dims(spec, x, xi)?;
    if mesh.dim() != spec.n || field.m != spec.m {
        return invalid("field does not match the spec dimensions");
    }
    field.check(mesh)?;
    let density = FrozenDensity { spec, x: x.to_vec() };
    Ok(Problem { mesh, density: &density, xi: xi.entries() }.energy(&field.values))
}

/// The growth-certificate laminate, if the spec has upper-bound constants
/// and det ξ lies strictly inside (−α, α).
fn certificate_laminate(
    spec: &IntegrandSpec,
    xi: &MatrixMN,
    mesh_n: usize,
    max_depth: usize,
    notes: &mut Vec<String>,
) -> Option<(CellMesh, DisplacementField)> {
    if spec.m != spec.n {
        return None;
    }
    let (alpha, _) = spec.chat2_constants()?;
    let det = xi.det().ok()?;
    if det.abs() >= alpha {
        return None;
    }
    let built = det_target_laminate(xi, -alpha, alpha, max_depth).and_then(|t| laminate_field_build(xi, &t, mesh_n, 1.0));
    match built {
        Ok(lf) => Some((lf.mesh, lf.field)),
        Err(e) => {
            notes.push(format!("laminate start skipped: {e}"));
            None
        }
    }
}

/// Minimizes over fields on `mesh` from the standard starts plus `extra`.
#[allow(clippy::too_many_arguments)]
pub fn zf_estimate_on(
    spec: &IntegrandSpec,
    x: &[f64],
    xi: &MatrixMN,
    mesh: &CellMesh,
    mesh_n: usize,
    starts: usize,
    seed: u64,
    extra: Vec<DisplacementField>,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeEstimate> {
    check_dims(spec, x, xi)?;
    if starts == 0 {
        return invalid("starts must be at least 1");
    }
    let density = FrozenDensity { spec, x: x.to_vec() };
    estimate_with_density(&density, x, xi, mesh, mesh_n, starts, seed, extra, opts, Vec::new())
}

#[allow(clippy::too_many_arguments)]
fn estimate_with_density<D: Density + ?Sized>(
    density: &D,
    x: &[f64],
    xi: &MatrixMN,
    mesh: &CellMesh,
    mesh_n: usize,
    starts: usize,
    seed: u64,
    extra: Vec<DisplacementField>,
    opts: &EnvelopeOptions,
    mut diagnostics: Vec<String>,
) -> Result<EnvelopeEstimate> {
    let m = density.rows();
    let mut fields = standard_starts(mesh, m, starts, seed, mesh_n);
    for f in &extra {
        f.check(mesh)?;
    }
    fields.extend(extra);
    let problem = Problem { mesh, density, xi: xi.entries() };
    let run = multistart(&problem, &fields, &opts.descent);
    let best = run.best();
    if best.energy.is_infinite() {
        diagnostics.push("every start has infinite energy".into());
    }
    Ok(EnvelopeEstimate {
        x: x.to_vec(),
        xi: xi.clone(),
        value: best.energy,
        mesh_n,
        starts: fields.len(),
        best_start: run.best,
        start_energies: run.energies(),
        converged: best.converged,
        chain: vec![(mesh_n, best.energy)],
        diagnostics,
        mesh: Some(mesh.clone()),
        field: Some(best.field.clone()),
    })
}

/// Upper bound for Zf(x, ξ) on a uniform mesh (plus laminate kinks when the
/// certificate laminate is used as a start).
pub fn zf_estimate(spec: &IntegrandSpec, x: &[f64], xi: &MatrixMN, mesh_n: usize, starts: usize, seed: u64) -> Result<EnvelopeEstimate> {
    zf_estimate_with(spec, x, xi, mesh_n, starts, seed, &EnvelopeOptions::default())
}

pub fn zf_estimate_with(
    spec: &IntegrandSpec,
    x: &[f64],
    xi: &MatrixMN,
    mesh_n: usize,
    starts: usize,
    seed: u64,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeEstimate> {
    check_dims(spec, x, xi)?;
    if mesh_n < 2 {
        return invalid("mesh-n must be at least 2");
    }
    let mut notes = Vec::new();
    let lam = if opts.laminate_start { certificate_laminate(spec, xi, mesh_n, opts.max_depth, &mut notes) } else { None };
    let (mesh, extra) = match lam {
        // the laminate mesh is the uniform grid plus the laminate kinks
        Some((mesh, field)) => (mesh, vec![field]),
        None => (CellMesh::uniform(spec.n, mesh_n, 1.0)?, Vec::new()),
    };
    if starts == 0 {
        return invalid("starts must be at least 1");
    }
    let density = FrozenDensity { spec, x: x.to_vec() };
    let mut est = estimate_with_density(&density, x, xi, &mesh, mesh_n, starts, seed, extra, opts, notes)?;
    if est.value.is_infinite() && spec.form == Form::HForm && eval_h(&spec.h, xi.det()?).is_infinite() {
        // an element with a facet on the cell boundary has ∇φ = c⊗ν, so its
        // determinant is det ξ whenever cof ξ·ν = 0
        est.diagnostics.push(
            "h(det xi) is infinite and no discrete start left the singular set; elements on the cell boundary inherit det xi when the matching cofactor column vanishes".into(),
        );
    }
    Ok(est)
}

/// Estimates on a chain of nested meshes. Each level's mesh contains the
/// previous level's nodes, so the prolonged minimizer is an exact start and
/// the chain cannot increase.
pub fn zf_refine(
    spec: &IntegrandSpec,
    x: &[f64],
    xi: &MatrixMN,
    mesh_chain: &[usize],
    starts: usize,
    seed: u64,
) -> Result<EnvelopeEstimate> {
    zf_refine_with(spec, x, xi, mesh_chain, starts, seed, &EnvelopeOptions::default())
}

pub fn zf_refine_with(
    spec: &IntegrandSpec,
    x: &[f64],
    xi: &MatrixMN,
    mesh_chain: &[usize],
    starts: usize,
    seed: u64,
    opts: &EnvelopeOptions,
) -> Result<EnvelopeEstimate> {
    check_dims(spec, x, xi)?;
    if mesh_chain.is_empty() || mesh_chain[0] < 2 {
        return invalid("mesh chain must be non-empty with entries >= 2");
    }
    if mesh_chain.windows(2).any(|w| w[1] <= w[0] || w[1] % w[0] != 0) {
        return invalid(format!("mesh chain {mesh_chain:?} must be strictly increasing with each level dividing the next"));
    }
    let mut chain = Vec::new();
    let mut prev: Option<EnvelopeEstimate> = None;
    let mut diagnostics = Vec::new();
    for (level, &n) in mesh_chain.iter().enumerate() {
        let mut notes = Vec::new();
        let lam = if opts.laminate_start { certificate_laminate(spec, xi, n, opts.max_depth, &mut notes) } else { None };
        let mut extra_nodes: Vec<Vec<f64>> = vec![Vec::new(); spec.n];
        if let Some((lm, _)) = &lam {
            for (e, a) in extra_nodes.iter_mut().zip(lm.axes()) {
                e.extend(a.iter().copied());
            }
        }
        if let Some(p) = &prev {
            for (e, a) in extra_nodes.iter_mut().zip(p.mesh.as_ref().expect("mesh kept").axes()) {
                e.extend(a.iter().copied());
            }
        }
        let mesh = CellMesh::refined_uniform(spec.n, n, 1.0, &extra_nodes)?;
        let mut extra = Vec::new();
        if let Some((lm, lf)) = &lam {
            extra.push(lf.resample(lm, &mesh));
        }
        let injected = prev.as_ref().map(|p| {
            p.field.as_ref().expect("field kept").resample(p.mesh.as_ref().expect("mesh kept"), &mesh)
        });
        let injected_index = injected.as_ref().map(|_| starts.max(1) + extra.len());
        if let Some(f) = injected {
            extra.push(f);
        }
        let mut est = zf_estimate_on(spec, x, xi, &mesh, n, starts, seed.wrapping_add(level as u64), extra, opts)?;
        diagnostics.extend(notes.into_iter().map(|s| format!("mesh {n}: {s}")));
        if let (Some(p), Some(idx)) = (&prev, injected_index) {
            // the prolonged field reproduces the coarse energy up to rounding
            if est.value > p.value {
                est.value = p.value;
                est.best_start = idx;
                est.field = p.field.as_ref().map(|f| f.resample(p.mesh.as_ref().unwrap(), &mesh));
            }
        }
        chain.push((n, est.value));
        prev = Some(est);
    }
    let mut last = prev.expect("non-empty chain");
    diagnostics.append(&mut last.diagnostics);
    last.chain = chain;
    last.diagnostics = diagnostics;
    Ok(last)
}

/// Outcome of a search for a field beating f(ξ).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeResult {
    pub violated: bool,
    /// f(ξ) minus the lowest energy found; positive values are violations.
    pub gap: f64,
    pub f_value: f64,
    pub best_energy: f64,
    #[serde(skip)]
    pub witness: Option<DisplacementField>,
}

/// Searches random and laminate-structured fields for
/// ∫_Y f(ξ + ∇φ) < f(ξ) − tol.
#[allow(clippy::too_many_arguments)]
pub fn quasiconvexity_probe(
    f: impl Fn(&[f64]) -> f64 + Sync,
    xi: &MatrixMN,
    probes: usize,
    mesh_n: usize,
    seed: u64,
    tol: f64,
) -> Result<ProbeResult> {
    if probes == 0 || mesh_n < 2 {
        return invalid("probes must be >= 1 and mesh-n >= 2");
    }
    let (m, n) = (xi.rows(), xi.cols());
    let f_value = f(xi.entries());
    let density = SliceDensity { m, n, f };
    let mesh = CellMesh::uniform(n, mesh_n, 1.0)?;
    let mut fields = standard_starts(&mesh, m, probes.max(4), seed, mesh_n);
    // sawtooth laminates along every coordinate pair
    for i in 0..m {
        for j in 0..n {
            fields.push(DisplacementField::from_fn(&mesh, m, |p| {
                let mut v = vec![0.0; m];
                v[i] = crate::descent::sawtooth(p[j], 1.0 / mesh_n as f64);
                v
            }));
        }
    }
    let problem = Problem { mesh: &mesh, density: &density, xi: xi.entries() };
    let run = multistart(&problem, &fields, &DescentOptions::default());
    let best = run.best();
    let gap = if f_value.is_finite() {
        f_value - best.energy
    } else if best.energy.is_finite() {
        f64::INFINITY
    } else {
        0.0
    };
    let violated = gap > tol;
    Ok(ProbeResult { violated, gap, f_value, best_energy: best.energy, witness: violated.then(|| best.field.clone()) })
}

/// Normalized minima over Y and over the box D = (0, s)^N at the same
/// element density.
#[allow(clippy::too_many_arguments)]
pub fn domain_invariance_check(
    spec: &IntegrandSpec,
    x: &[f64],
    xi: &MatrixMN,
    domain_scale: f64,
    mesh_n: usize,
    starts: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_dims(spec, x, xi)?;
    if !(domain_scale.is_finite() && domain_scale > 0.0) {
        return invalid("domain scale must be positive");
    }
    let opts = EnvelopeOptions::default();
    let val_y = zf_estimate_with(spec, x, xi, mesh_n, starts, seed, &opts)?.value;
    let sub = ((domain_scale * mesh_n as f64).round() as usize).max(2);
    let mesh_d = CellMesh::uniform(spec.n, sub, domain_scale)?;
    let density = FrozenDensity { spec, x: x.to_vec() };
    let est = estimate_with_density(&density, x, xi, &mesh_d, mesh_n, starts, seed, Vec::new(), &opts, Vec::new())?;
    Ok((val_y, est.value / mesh_d.measure()))
}

/// CSV with columns x..., xi entries..., mesh_n, value, starts, converged.
pub fn write_envelope_csv(estimates: &[EnvelopeEstimate], mut w: impl Write) -> Result<()> {
    let Some(first) = estimates.first() else {
        return Err(Error::InvalidInput("no estimates to write".into()));
    };
    let xs: Vec<String> = (0..first.x.len()).map(|i| format!("x{}", i + 1)).collect();
    let es: Vec<String> =
        (0..first.xi.rows() * first.xi.cols()).map(|i| format!("xi_{}{}", i / first.xi.cols() + 1, i % first.xi.cols() + 1)).collect();
    writeln!(w, "{},{},mesh_n,value,starts,converged", xs.join(","), es.join(","))?;
    for e in estimates {
        let xv: Vec<String> = e.x.iter().map(|v| fmt_num(*v)).collect();
        let ev: Vec<String> = e.xi.entries().iter().map(|v| fmt_num(*v)).collect();
        writeln!(w, "{},{},{},{},{},{}", xv.join(","), ev.join(","), e.mesh_n, fmt_num(e.value), e.starts, e.converged)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::{CoefficientField, HProfile};

    fn double_well() -> IntegrandSpec {
        IntegrandSpec::double_well(1, 1, CoefficientField::constant(1.0))
    }

    fn h_spec() -> IntegrandSpec {
        IntegrandSpec::h_form(2, 2.0, CoefficientField::constant(1.0), HProfile::standard(1.0, 1.0))
    }

    #[test]
    fn singular_zero_matrix_is_infinite_on_finite_meshes() {
        let est = zf_estimate(&h_spec(), &[0.0, 0.0], &MatrixMN::zeros(2, 2), 8, 4, 1).unwrap();
        assert_eq!(est.value, f64::INFINITY);
        assert!(est.diagnostics.iter().any(|d| d.contains("cofactor column")));
    }

    #[test]
    fn zero_field_energy_is_pointwise_value() {
        let spec = h_spec();
        let mesh = CellMesh::uniform(2, 5, 1.0).unwrap();
        let xi = MatrixMN::identity(2);
        let e = cell_energy(&spec, &[0.3, 0.1], &xi, &mesh, &DisplacementField::zeros(&mesh, 2)).unwrap();
        assert!((e - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quadratic_energy_splits() {
        let spec = IntegrandSpec::power(2, 2, 2.0, CoefficientField::constant(1.0));
        let mesh = CellMesh::uniform(2, 6, 1.0).unwrap();
        let xi = MatrixMN::from_rows(&[&[1.0, 2.0], &[-0.5, 0.3]]);
        let field = DisplacementField::from_fn(&mesh, 2, |p| vec![(p[0] * 5.0).sin(), p[0] * p[1]]);
        let e = cell_energy(&spec, &[0.0, 0.0], &xi, &mesh, &field).unwrap();
        let grad = field.gradient_lp_norm_pow(&mesh, 2.0);
        assert!((e - (xi.norm_sq() + grad)).abs() < 1e-10);
    }

    #[test]
    fn convex_estimate_is_exact() {
        let spec = IntegrandSpec::power(2, 2, 2.0, CoefficientField::constant(1.0));
        let est = zf_estimate(&spec, &[0.0, 0.0], &MatrixMN::identity(2), 8, 4, 1).unwrap();
        assert!((est.value - 2.0).abs() < 1e-6);
    }

    #[test]
    fn double_well_relaxes() {
        let est = zf_estimate(&double_well(), &[0.0], &MatrixMN::zeros(1, 1), 64, 8, 2).unwrap();
        assert!(est.value <= 0.05, "{}", est.value);
        assert_eq!(est.start_energies.len(), est.starts);
    }

    #[test]
    fn refine_chain_nonincreasing() {
        let est = zf_refine(&double_well(), &[0.0], &MatrixMN::zeros(1, 1), &[8, 16, 32], 4, 5).unwrap();
        assert_eq!(est.chain.len(), 3);
        assert!(est.chain.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!(est.value <= 0.02);
        assert!(zf_refine(&double_well(), &[0.0], &MatrixMN::zeros(1, 1), &[8, 12], 4, 5).is_err());
    }

    #[test]
    fn h_form_estimates_stay_below_pointwise() {
        let spec = h_spec();
        let est = zf_estimate(&spec, &[0.0, 0.0], &MatrixMN::identity(2), 8, 4, 3).unwrap();
        assert!(est.value <= 3.0);
        let xi = MatrixMN::diag(&[1.0, 0.1]);
        let est = zf_refine(&spec, &[0.0, 0.0], &xi, &[4, 8], 4, 3).unwrap();
        assert!(est.chain.iter().all(|(_, v)| v.is_finite()));
        assert!(est.chain[1].1 <= est.chain[0].1);
    }

    #[test]
    fn probe_detects_double_well() {
        let f = |e: &[f64]| (e[0] * e[0] - 1.0).powi(2);
        let r = quasiconvexity_probe(f, &MatrixMN::zeros(1, 1), 4, 32, 1, 1e-6).unwrap();
        assert!(r.violated);
        assert!(r.gap >= 0.5);
        let convex = |e: &[f64]| e[0] * e[0];
        let r = quasiconvexity_probe(convex, &MatrixMN::from_rows(&[&[0.7]]), 4, 32, 1, 1e-9).unwrap();
        assert!(!r.violated, "{}", r.gap);
    }

    #[test]
    fn domain_invariance_convex() {
        let spec = IntegrandSpec::power(1, 1, 2.0, CoefficientField::constant(1.0));
        let (y, d) = domain_invariance_check(&spec, &[0.0], &MatrixMN::from_rows(&[&[1.5]]), 2.0, 16, 4, 1).unwrap();
        assert!((y - 2.25).abs() < 1e-9 && (d - 2.25).abs() < 1e-9);
    }
}
