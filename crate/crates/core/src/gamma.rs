//! Minima of the oscillating functionals I_ε(φ) = ∫_Ω W(x/ε, ∇φ) on the unit
//! box with affine boundary data φ = ξx, against |Ω|·W_hom(ξ).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::{whom_solve, CellProblemResult};
use crate::descent::{multistart, standard_starts, DescentOptions, OscillatingDensity, Problem};
use crate::error::{invalid, Result};
use crate::integrand::{IntegrandSpec, MatrixMN};
use crate::laminate::fmt_num;
use crate::mesh::{CellMesh, DisplacementField};

/// ε = 1/j for a positive integer j. Accepts values within 1e-12 of such a
/// reciprocal.
pub fn eps_to_period_count(eps: f64) -> Result<usize> {
    if !(eps > 0.0 && eps <= 1.0) {
        return invalid(format!("epsilon {eps} must lie in (0, 1]"));
    }
    let j = (1.0 / eps).round();
    if (1.0 / j - eps).abs() > 1e-12 {
        return invalid(format!("epsilon {eps} is not the reciprocal of an integer"));
    }
    Ok(j as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRecord {
    pub epsilon: f64,
    pub periods: usize,
    pub mesh_n: usize,
    pub min_energy: f64,
    pub converged: bool,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaRunReport {
    /// Ω = (0, 1)^N.
    pub domain_dim: usize,
    pub xi: MatrixMN,
    pub eps_list: Vec<f64>,
    pub records: Vec<GammaRecord>,
    pub reference: f64,
    pub cell: CellProblemResult,
    pub diagnostics: Vec<String>,
}

impl GammaRunReport {
    /// CSV: epsilon, min_energy, reference, relative_gap.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "epsilon,min_energy,reference,relative_gap")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_num(r.epsilon),
                fmt_num(r.min_energy),
                fmt_num(self.reference),
                fmt_num(r.relative_gap)
            )?;
        }
        Ok(())
    }
}

pub fn relative_gap(min_energy: f64, reference: f64) -> f64 {
    if min_energy == reference {
        return 0.0;
    }
    (min_energy - reference).abs() / (1.0 + reference)
}

fn check_periods(spec: &IntegrandSpec, xi: &MatrixMN, j: usize, mesh_n: usize) -> Result<()> {
    if xi.rows() != spec.m || xi.cols() != spec.n {
        return invalid(format!("xi is {}x{}, spec needs {}x{}", xi.rows(), xi.cols(), spec.m, spec.n));
    }
    let unit = j * spec.a.lattice();
    if j == 0 || mesh_n == 0 || !mesh_n.is_multiple_of(unit) {
        return invalid(format!("mesh-n {mesh_n} must be a positive multiple of {unit} (periods times coefficient lattice)"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ieps_solve(
    spec: &IntegrandSpec,
    xi: &MatrixMN,
    j: usize,
    mesh_n: usize,
    starts: usize,
    seed: u64,
    extra: Vec<DisplacementField>,
    opts: &DescentOptions,
) -> Result<(f64, bool)> {
    check_periods(spec, xi, j, mesh_n)?;
    let mesh = CellMesh::uniform(spec.n, mesh_n, 1.0)?;
    let density = OscillatingDensity { spec, scale: j as f64 };
    let mut fields = standard_starts(&mesh, spec.m, starts.max(1), seed, mesh_n);
    fields.extend(extra);
    let problem = Problem { mesh: &mesh, density: &density, xi: xi.entries() };
    let run = multistart(&problem, &fields, opts);
    let best = run.best();
    // |Ω| = 1, so the energy is already the mean
    Ok((best.energy, best.converged))
}

/// min I_{1/j} over piecewise-affine φ with φ = ξx at boundary vertices.
pub fn ieps_minimize(spec: &IntegrandSpec, xi: &MatrixMN, eps: f64, mesh_n: usize, starts: usize, seed: u64) -> Result<f64> {
    let j = eps_to_period_count(eps)?;
    Ok(ieps_solve(spec, xi, j, mesh_n, starts, seed, Vec::new(), &DescentOptions::default())?.0)
}

/// x ↦ ε v(x/ε) for the cell minimizer v, on the mesh of Ω.
fn rescaled_cell_field(cell_mesh: &CellMesh, v: &DisplacementField, j: usize, omega: &CellMesh) -> Result<DisplacementField> {
    let n = cell_mesh.axes()[0].len() - 1;
    let tiled_mesh = CellMesh::uniform(cell_mesh.dim(), j * n, j as f64)?;
    let tiled = v.periodic_extension(cell_mesh, &tiled_mesh);
    let mut out = tiled.resample(&tiled_mesh, omega);
    for x in &mut out.values {
        *x /= j as f64;
    }
    Ok(out)
}

/// Cell value first, then every ε concurrently; each ε is warm-started with
/// the ε-rescaled periodic cell minimizer.
pub fn gamma_run(
    spec: &IntegrandSpec,
    xi: &MatrixMN,
    eps_list: &[f64],
    mesh_n_per_period: usize,
    k_max: usize,
    starts: usize,
    seed: u64,
) -> Result<GammaRunReport> {
    gamma_run_with(spec, xi, eps_list, mesh_n_per_period, k_max, starts, seed, &DescentOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn gamma_run_with(
    spec: &IntegrandSpec,
    xi: &MatrixMN,
    eps_list: &[f64],
    mesh_n_per_period: usize,
    k_max: usize,
    starts: usize,
    seed: u64,
    opts: &DescentOptions,
) -> Result<GammaRunReport> {
    if eps_list.is_empty() {
        return invalid("eps-list is empty");
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return invalid("eps-list must be strictly decreasing");
    }
    let periods: Vec<usize> = eps_list.iter().map(|e| eps_to_period_count(*e)).collect::<Result<_>>()?;
    for &j in &periods {
        check_periods(spec, xi, j, j * mesh_n_per_period)?;
    }
    let (cell, first) = whom_solve(spec, xi, k_max, mesh_n_per_period, starts, seed, opts)?;
    let reference = cell.whom_estimate;
    let solved: Vec<Result<(f64, bool)>> = periods
        .par_iter()
        .map(|&j| {
            let mesh_n = j * mesh_n_per_period;
            let omega = CellMesh::uniform(spec.n, mesh_n, 1.0)?;
            let warm = rescaled_cell_field(&first.mesh, &first.field, j, &omega)?;
            ieps_solve(spec, xi, j, mesh_n, starts, seed, vec![warm], opts)
        })
        .collect();
    let mut records = Vec::with_capacity(periods.len());
    for ((&eps, &j), r) in eps_list.iter().zip(&periods).zip(solved) {
        let (min_energy, converged) = r?;
        records.push(GammaRecord {
            epsilon: eps,
            periods: j,
            mesh_n: j * mesh_n_per_period,
            min_energy,
            converged,
            relative_gap: relative_gap(min_energy, reference),
        });
    }
    let mut diagnostics = cell.diagnostics.clone();
    if records.iter().any(|r| !r.converged) {
        diagnostics.push("some epsilon minimizations hit the iteration limit".into());
    }
    Ok(GammaRunReport {
        domain_dim: spec.n,
        xi: xi.clone(),
        eps_list: eps_list.to_vec(),
        records,
        reference,
        cell,
        diagnostics,
    })
}
