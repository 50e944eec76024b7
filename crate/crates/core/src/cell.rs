//! Multi-cell problems m_k = (1/k^N) inf ∫_{kY} W(x, ξ + ∇φ) with φ = 0 on
//! ∂(kY), their infimum over k, and the W-versus-ZW cell identity.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::{multistart, standard_starts, DescentOptions, Density, OscillatingDensity, Problem};
use crate::envelope::{zf_estimate_with, EnvelopeOptions};
use crate::error::{invalid, Error, Result};
use crate::integrand::{IntegrandSpec, MatrixMN};
use crate::laminate::fmt_num;
use crate::mesh::{CellMesh, DisplacementField};

pub const DEFAULT_K_MAX: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub k: usize,
    /// Subdivisions per axis of kY.
    pub mesh_n: usize,
    pub value: f64,
    pub starts: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellProblemResult {
    pub xi: MatrixMN,
    pub records: Vec<CellRecord>,
    pub whom_estimate: f64,
    pub k_max: usize,
    pub diagnostics: Vec<String>,
}

/// Minimizer of one k-cell problem.
#[derive(Debug, Clone)]
pub struct CellSolution {
    pub record: CellRecord,
    pub mesh: CellMesh,
    pub field: DisplacementField,
}

fn check_alignment(spec: &IntegrandSpec, mesh_n: usize) -> Result<()> {
    let lattice = spec.a.lattice();
    if mesh_n == 0 || !mesh_n.is_multiple_of(lattice) {
        return invalid(format!(
            "mesh-n per period {mesh_n} must be a positive multiple of the coefficient lattice {lattice}"
        ));
    }
    Ok(())
}

fn check_xi(spec: &IntegrandSpec, xi: &MatrixMN) -> Result<()> {
    if xi.rows() != spec.m || xi.cols() != spec.n {
        return invalid(format!("xi is {}x{}, spec needs {}x{}", xi.rows(), xi.cols(), spec.m, spec.n));
    }
    if spec.form == crate::integrand::Form::HForm && spec.m != spec.n {
        return invalid("H-form needs square matrices");
    }
    Ok(())
}

/// One k-cell problem with element-centroid quadrature of W(x, ·).
#[allow(clippy::too_many_arguments)]
pub fn mk_solve(
    spec: &IntegrandSpec,
    xi: &MatrixMN,
    k: usize,
    mesh_n: usize,
    starts: usize,
    seed: u64,
    extra: Vec<DisplacementField>,
    opts: &DescentOptions,
) -> Result<CellSolution> {
    check_xi(spec, xi)?;
    check_alignment(spec, mesh_n)?;
    if k == 0 || starts == 0 {
        return invalid("k and starts must be at least 1");
    }
    let mesh = CellMesh::uniform(spec.n, k * mesh_n, k as f64)?;
    let density = OscillatingDensity { spec, scale: 1.0 };
    let mut fields = standard_starts(&mesh, spec.m, starts, seed, mesh_n);
    fields.extend(extra);
    let problem = Problem { mesh: &mesh, density: &density, xi: xi.entries() };
    let run = multistart(&problem, &fields, opts);
    let best = run.best();
    let scale = (k as f64).powi(spec.n as i32);
    Ok(CellSolution {
        record: CellRecord { k, mesh_n: k * mesh_n, value: best.energy / scale, starts: fields.len(), converged: best.converged },
        field: best.field.clone(),
        mesh,
    })
}

pub fn mk_value(spec: &IntegrandSpec, xi: &MatrixMN, k: usize, mesh_n: usize, starts: usize, seed: u64) -> Result<f64> {
    Ok(mk_solve(spec, xi, k, mesh_n, starts, seed, Vec::new(), &DescentOptions::default())?.record.value)
}

/// m_k for k = 1..k_max; the k-fold periodic extension of the k = 1
/// minimizer seeds every k > 1.
pub fn whom_estimate(spec: &IntegrandSpec, xi: &MatrixMN, k_max: usize, mesh_n: usize, starts: usize, seed: u64) -> Result<CellProblemResult> {
    whom_estimate_with(spec, xi, k_max, mesh_n, starts, seed, &DescentOptions::default())
}

pub fn whom_estimate_with(
    spec: &IntegrandSpec,
    xi: &MatrixMN,
    k_max: usize,
    mesh_n: usize,
    starts: usize,
    seed: u64,
    opts: &DescentOptions,
) -> Result<CellProblemResult> {
    Ok(whom_solve(spec, xi, k_max, mesh_n, starts, seed, opts)?.0)
}

/// As [`whom_estimate_with`], also returning the k = 1 minimizer.
pub fn whom_solve(
    spec: &IntegrandSpec,
    xi: &MatrixMN,
    k_max: usize,
    mesh_n: usize,
    starts: usize,
    seed: u64,
    opts: &DescentOptions,
) -> Result<(CellProblemResult, CellSolution)> {
    if k_max == 0 {
        return invalid("k-max must be at least 1");
    }
    let first = mk_solve(spec, xi, 1, mesh_n, starts, seed, Vec::new(), opts)?;
    let rest: Vec<Result<CellSolution>> = (2..=k_max)
        .into_par_iter()
        .map(|k| {
            let mesh = CellMesh::uniform(spec.n, k * mesh_n, k as f64)?;
            let ext = first.field.periodic_extension(&first.mesh, &mesh);
            mk_solve(spec, xi, k, mesh_n, starts, seed.wrapping_add(k as u64), vec![ext], opts)
        })
        .collect();
    let mut records = vec![first.record.clone()];
    for r in rest {
        records.push(r?.record);
    }
    let whom = records.iter().map(|r| r.value).fold(f64::INFINITY, f64::min);
    let mut diagnostics = Vec::new();
    if whom.is_infinite() {
        diagnostics.push("every cell problem has infinite energy".into());
    }
    Ok((CellProblemResult { xi: xi.clone(), records, whom_estimate: whom, k_max, diagnostics }, first))
}

/// Tabulated ZW(x, ·): one row per element centroid of the k-cell mesh,
/// linear interpolation over a tensor grid of matrices. Queries outside the
/// grid evaluate to +∞.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZwSurrogate {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// values[row][flat grid index]
    pub values: Vec<Vec<f64>>,
    #[serde(skip)]
    index: HashMap<Vec<u64>, usize>,
}

impl ZwSurrogate {
    fn step(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / (self.nodes[k] - 1) as f64
    }

    fn grid_point(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut out = vec![0.0; self.nodes.len()];
        for k in (0..self.nodes.len()).rev() {
            out[k] = self.lo[k] + (rem % self.nodes[k]) as f64 * self.step(k);
            rem /= self.nodes[k];
        }
        out
    }

    pub fn covers(&self, f: &[f64]) -> bool {
        f.iter().enumerate().all(|(k, v)| *v >= self.lo[k] - 1e-12 && *v <= self.hi[k] + 1e-12)
    }

    /// Multilinear interpolation of the row at centroid `y`.
    pub fn eval(&self, y: &[f64], f: &[f64]) -> f64 {
        let key: Vec<u64> = y.iter().map(|v| v.to_bits()).collect();
        let Some(&row) = self.index.get(&key) else {
            return f64::INFINITY;
        };
        if !self.covers(f) {
            return f64::INFINITY;
        }
        let dims = self.nodes.len();
        let mut base = Vec::with_capacity(dims);
        let mut frac = Vec::with_capacity(dims);
        for k in 0..dims {
            let t = ((f[k] - self.lo[k]) / self.step(k)).clamp(0.0, (self.nodes[k] - 1) as f64);
            let i = (t.floor() as usize).min(self.nodes[k] - 2);
            base.push(i);
            frac.push(t - i as f64);
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            let mut flat = 0;
            for k in 0..dims {
                let bit = (corner >> k) & 1;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
                flat = flat * self.nodes[k] + base[k] + bit;
            }
            if w == 0.0 {
                continue;
            }
            let v = self.values[row][flat];
            if v.is_infinite() {
                return f64::INFINITY;
            }
            acc += w * v;
        }
        acc
    }
}

struct SurrogateDensity<'a> {
    table: &'a ZwSurrogate,
    m: usize,
    n: usize,
}

impl Density for SurrogateDensity<'_> {
    fn rows(&self) -> usize {
        self.m
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn value(&self, y: &[f64], f: &[f64]) -> f64 {
        self.table.eval(y, f)
    }
}

/// Tensor grid of matrices on which the ZW surrogate is tabulated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
    /// Mesh-n and starts of each tabulating envelope estimate.
    pub zf_mesh_n: usize,
    pub zf_starts: usize,
}

impl SurrogateGrid {
    pub fn cube(entries: usize, lo: f64, hi: f64, nodes: usize, zf_mesh_n: usize, zf_starts: usize) -> Self {
        Self { lo: vec![lo; entries], hi: vec![hi; entries], nodes: vec![nodes; entries], zf_mesh_n, zf_starts }
    }
}

/// Builds ZW(centroid, ·) on `grid` for every element of `mesh` by frozen-x
/// envelope estimates.
pub fn build_surrogate(spec: &IntegrandSpec, mesh: &CellMesh, grid: &SurrogateGrid, seed: u64) -> Result<ZwSurrogate> {
    let dims = spec.m * spec.n;
    if grid.lo.len() != dims || grid.hi.len() != dims || grid.nodes.len() != dims || grid.nodes.iter().any(|&n| n < 2) {
        return invalid(format!("surrogate grid needs {dims} ranges with at least two nodes each"));
    }
    let mut table = ZwSurrogate {
        lo: grid.lo.clone(),
        hi: grid.hi.clone(),
        nodes: grid.nodes.clone(),
        centroids: (0..mesh.n_elements()).map(|e| mesh.centroid(e).to_vec()).collect(),
        values: Vec::new(),
        index: HashMap::new(),
    };
    let total: usize = grid.nodes.iter().product();
    let points: Vec<Vec<f64>> = (0..total).map(|i| table.grid_point(i)).collect();
    let opts = EnvelopeOptions::default();
    let jobs: Vec<(usize, usize)> = (0..table.centroids.len()).flat_map(|r| (0..total).map(move |i| (r, i))).collect();
    let flat: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(r, i)| {
            let xi = MatrixMN::new(spec.m, spec.n, points[i].clone())?;
            let est = zf_estimate_with(spec, &table.centroids[r], &xi, grid.zf_mesh_n, grid.zf_starts, seed, &opts)?;
            Ok(est.value)
        })
        .collect();
    let mut values = Vec::with_capacity(table.centroids.len());
    let mut it = flat.into_iter();
    for _ in 0..table.centroids.len() {
        let row: Result<Vec<f64>> = (0..total).map(|_| it.next().expect("job count")).collect();
        values.push(row?);
    }
    table.values = values;
    table.index = table.centroids.iter().enumerate().map(|(r, c)| (c.iter().map(|v| v.to_bits()).collect(), r)).collect();
    Ok(table)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellIdentity {
    pub val_w: f64,
    pub val_zw: f64,
    pub k: usize,
    pub mesh_n: usize,
    /// Largest |ξ + ∇φ| entry seen at either minimizer.
    pub max_excursion: f64,
}

/// k-cell minima with W and with the tabulated ZW surrogate.
#[allow(clippy::too_many_arguments)]
pub fn cell_identity_check(
    spec: &IntegrandSpec,
    xi: &MatrixMN,
    k: usize,
    mesh_n: usize,
    starts: usize,
    seed: u64,
    grid: &SurrogateGrid,
) -> Result<CellIdentity> {
    let opts = DescentOptions::default();
    let w = mk_solve(spec, xi, k, mesh_n, starts, seed, Vec::new(), &opts)?;
    let table = build_surrogate(spec, &w.mesh, grid, seed)?;

    // the W-minimizer's gradients must lie inside the table
    let (m, n) = (spec.m, spec.n);
    let mut g = vec![0.0; m * n];
    let mut outside = Vec::new();
    let mut excursion = 0.0f64;
    for e in 0..w.mesh.n_elements() {
        w.mesh.element_gradient(e, &w.field.values, m, &mut g);
        for (gi, x) in g.iter_mut().zip(xi.entries()) {
            *gi += x;
            excursion = excursion.max(gi.abs());
        }
        if !table.covers(&g) {
            outside.extend(g.iter().copied());
        }
    }
    if !table.covers(xi.entries()) {
        outside.extend(xi.entries().iter().copied());
    }
    if !outside.is_empty() {
        return Err(Error::Coverage { queries: outside });
    }

    let density = SurrogateDensity { table: &table, m, n };
    let mut fields = standard_starts(&w.mesh, m, starts, seed, mesh_n);
    fields.push(w.field.clone());
    let problem = Problem { mesh: &w.mesh, density: &density, xi: xi.entries() };
    let run = multistart(&problem, &fields, &opts);
    let best = run.best();
    for e in 0..w.mesh.n_elements() {
        w.mesh.element_gradient(e, &best.field.values, m, &mut g);
        for (gi, x) in g.iter().zip(xi.entries()) {
            excursion = excursion.max((gi + x).abs());
        }
    }
    let scale = (k as f64).powi(n as i32);
    Ok(CellIdentity { val_w: w.record.value, val_zw: best.energy / scale, k, mesh_n, max_excursion: excursion })
}

/// Tabulated W_hom.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HomDensityTable {
    pub spec_hash: String,
    pub config: serde_json::Value,
    pub entries: Vec<CellProblemResult>,
}

impl HomDensityTable {
    pub fn new(spec: &IntegrandSpec, config: serde_json::Value, entries: Vec<CellProblemResult>) -> Result<Self> {
        for (i, a) in entries.iter().enumerate() {
            if entries[..i].iter().any(|b| b.xi == a.xi) {
                return invalid(format!("duplicate xi {:?} in table", a.xi.entries()));
            }
        }
        Ok(Self { spec_hash: spec.hash_hex(), config, entries })
    }

    pub fn matches(&self, spec: &IntegrandSpec) -> bool {
        self.spec_hash == spec.hash_hex()
    }

    /// CSV: xi entries..., k, m_k, whom.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let Some(first) = self.entries.first() else {
            writeln!(w, "k,m_k,whom")?;
            return Ok(());
        };
        let cols = first.xi.cols();
        let names: Vec<String> =
            (0..first.xi.entries().len()).map(|i| format!("xi_{}{}", i / cols + 1, i % cols + 1)).collect();
        writeln!(w, "{},k,m_k,whom", names.join(","))?;
        for e in &self.entries {
            let xs: Vec<String> = e.xi.entries().iter().map(|v| fmt_num(*v)).collect();
            for r in &e.records {
                writeln!(w, "{},{},{},{}", xs.join(","), r.k, fmt_num(r.value), fmt_num(e.whom_estimate))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::CoefficientField;

    fn layered_1d() -> IntegrandSpec {
        IntegrandSpec::power(1, 1, 2.0, CoefficientField::PiecewiseGrid { cells: vec![2], values: vec![1.0, 4.0] })
    }

    #[test]
    fn harmonic_mean_single_cell() {
        let v = mk_value(&layered_1d(), &MatrixMN::identity(1), 1, 64, 4, 1).unwrap();
        assert!((v - 1.6).abs() < 1e-6, "{v}");
    }

    #[test]
    fn misaligned_mesh_rejected() {
        assert!(mk_value(&layered_1d(), &MatrixMN::identity(1), 1, 63, 4, 1).is_err());
    }

    #[test]
    fn x_independent_power_is_pointwise() {
        let spec = IntegrandSpec::power(2, 2, 2.0, CoefficientField::constant(1.0));
        let xi = MatrixMN::from_rows(&[&[1.0, 0.5], &[0.0, 2.0]]);
        let r = whom_estimate(&spec, &xi, 2, 4, 4, 1).unwrap();
        for rec in &r.records {
            assert!((rec.value - xi.norm_sq()).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_gradient_has_zero_energy() {
        let spec = IntegrandSpec::power(1, 1, 2.0, CoefficientField::Sinusoidal {
            mean: 2.0,
            amplitude: 1.0,
            wavevector: vec![1],
            phase: 0.0,
        });
        let r = whom_estimate(&spec, &MatrixMN::zeros(1, 1), 3, 16, 4, 1).unwrap();
        assert!(r.records.iter().all(|rec| rec.value == 0.0));
        assert_eq!(r.whom_estimate, 0.0);
    }

    #[test]
    fn surrogate_interpolates_and_rejects_outside() {
        let spec = IntegrandSpec::power(1, 1, 2.0, CoefficientField::constant(1.0));
        let mesh = CellMesh::uniform(1, 4, 1.0).unwrap();
        let grid = SurrogateGrid::cube(1, -1.0, 1.0, 5, 4, 4);
        let table = build_surrogate(&spec, &mesh, &grid, 1).unwrap();
        let y = mesh.centroid(0).to_vec();
        assert!((table.eval(&y, &[0.5]) - 0.25).abs() < 1e-9);
        assert!((table.eval(&y, &[0.25]) - 0.125).abs() < 1e-9);
        assert_eq!(table.eval(&y, &[1.5]), f64::INFINITY);
    }

    #[test]
    fn identity_check_for_convex_integrand() {
        let spec = IntegrandSpec::power(1, 1, 2.0, CoefficientField::constant(1.0));
        let grid = SurrogateGrid::cube(1, -2.0, 2.0, 9, 4, 4);
        let r = cell_identity_check(&spec, &MatrixMN::identity(1), 1, 8, 4, 1, &grid).unwrap();
        assert!((r.val_w - 1.0).abs() < 1e-9 && (r.val_zw - 1.0).abs() < 1e-9);
        let narrow = SurrogateGrid::cube(1, -0.5, 0.5, 5, 4, 4);
        assert!(matches!(
            cell_identity_check(&spec, &MatrixMN::identity(1), 1, 8, 4, 1, &narrow),
            Err(Error::Coverage { .. })
        ));
    }

    #[test]
    fn table_rejects_duplicates() {
        let spec = layered_1d();
        let r = whom_estimate(&spec, &MatrixMN::identity(1), 1, 8, 2, 1).unwrap();
        assert!(HomDensityTable::new(&spec, serde_json::Value::Null, vec![r.clone(), r.clone()]).is_err());
        let t = HomDensityTable::new(&spec, serde_json::Value::Null, vec![r]).unwrap();
        assert!(t.matches(&spec));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("xi_11,k,m_k,whom\n"));
    }
}
