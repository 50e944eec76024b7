//! Feasible-point minimization of ∫ w(y, ξ + ∇φ(y)) dy over zero-boundary
//! piecewise-affine fields.
//!
//! Quasi-Newton steps (L-BFGS with backtracking) alternate with coordinate
//! pattern sweeps on vertex values. Any trial point of infinite energy is
//! rejected, so the iterates never leave the finite region of the start.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::integrand::IntegrandSpec;
use crate::mesh::{CellMesh, DisplacementField};

/// Energy density evaluated on elements: `value(y, F)` with `y` the element
/// centroid and `F` the full m×N gradient, row-major.
pub trait Density: Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn value(&self, y: &[f64], f: &[f64]) -> f64;

    /// Value and ∂/∂F. The default uses central differences, one-sided next
    /// to an infinite value.
    fn value_grad(&self, y: &[f64], f: &[f64], grad: &mut [f64]) -> f64 {
        let v = self.value(y, f);
        grad.iter_mut().for_each(|g| *g = 0.0);
        if !v.is_finite() {
            return v;
        }
        let mut probe = f.to_vec();
        for i in 0..f.len() {
            let h = 1e-6 * (1.0 + f[i].abs());
            probe[i] = f[i] + h;
            let up = self.value(y, &probe);
            probe[i] = f[i] - h;
            let down = self.value(y, &probe);
            probe[i] = f[i];
            grad[i] = match (up.is_finite(), down.is_finite()) {
                (true, true) => (up - down) / (2.0 * h),
                (true, false) => (up - v) / h,
                (false, true) => (v - down) / h,
                (false, false) => 0.0,
            };
        }
        v
    }
}

/// W(x, ·) with x held fixed.
pub struct FrozenDensity<'a> {
    pub spec: &'a IntegrandSpec,
    pub x: Vec<f64>,
}

impl Density for FrozenDensity<'_> {
    fn rows(&self) -> usize {
        self.spec.m
    }
    fn cols(&self) -> usize {
        self.spec.n
    }
    #[inline]
    fn value(&self, _y: &[f64], f: &[f64]) -> f64 {
        self.spec.eval_entries(&self.x, f)
    }
    #[inline]
    fn value_grad(&self, _y: &[f64], f: &[f64], grad: &mut [f64]) -> f64 {
        self.spec.eval_entries_with_grad(&self.x, f, grad)
    }
}

/// W(scale·y, ·): the oscillating integrand at the element centroid.
pub struct OscillatingDensity<'a> {
    pub spec: &'a IntegrandSpec,
    pub scale: f64,
}

impl OscillatingDensity<'_> {
    #[inline]
    fn point(&self, y: &[f64]) -> [f64; 8] {
        let mut x = [0.0; 8];
        for (xi, yi) in x.iter_mut().zip(y) {
            *xi = self.scale * yi;
        }
        x
    }
}

impl Density for OscillatingDensity<'_> {
    fn rows(&self) -> usize {
        self.spec.m
    }
    fn cols(&self) -> usize {
        self.spec.n
    }
    #[inline]
    fn value(&self, y: &[f64], f: &[f64]) -> f64 {
        let x = self.point(y);
        self.spec.eval_entries(&x[..y.len()], f)
    }
    #[inline]
    fn value_grad(&self, y: &[f64], f: &[f64], grad: &mut [f64]) -> f64 {
        let x = self.point(y);
        self.spec.eval_entries_with_grad(&x[..y.len()], f, grad)
    }
}

/// An x-independent function of the matrix, e.g. a slice f(x₀, ·) or a
/// tabulated envelope.
pub struct SliceDensity<F> {
    pub m: usize,
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> Density for SliceDensity<F> {
    fn rows(&self) -> usize {
        self.m
    }
    fn cols(&self) -> usize {
        self.n
    }
    fn value(&self, _y: &[f64], f: &[f64]) -> f64 {
        (self.f)(f)
    }
}

/// ∫ w(y, ξ + ∇φ) over a mesh, for fields vanishing on the boundary.
pub struct Problem<'a, D: Density + ?Sized> {
    pub mesh: &'a CellMesh,
    pub density: &'a D,
    pub xi: &'a [f64],
}

impl<D: Density + ?Sized> Problem<'_, D> {
    fn m(&self) -> usize {
        self.density.rows()
    }

    #[inline]
    fn element_energy(&self, e: usize, values: &[f64], buf: &mut [f64]) -> f64 {
        self.mesh.element_gradient(e, values, self.m(), buf);
        for (b, x) in buf.iter_mut().zip(self.xi) {
            *b += x;
        }
        let w = self.density.value(self.mesh.centroid(e), buf);
        if w == 0.0 {
            0.0
        } else {
            self.mesh.volume(e) * w
        }
    }

    /// Total energy, accumulated in element order.
    pub fn energy(&self, values: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.xi.len()];
        let mut total = 0.0;
        for e in 0..self.mesh.n_elements() {
            total += self.element_energy(e, values, &mut buf);
            if total.is_infinite() {
                return f64::INFINITY;
            }
        }
        total
    }

    /// Per-element energies (volume-weighted).
    pub fn element_energies(&self, values: &[f64]) -> Vec<f64> {
        let mut buf = vec![0.0; self.xi.len()];
        (0..self.mesh.n_elements()).map(|e| self.element_energy(e, values, &mut buf)).collect()
    }

    /// Energy and its gradient with respect to the vertex values; boundary
    /// components of the gradient are zeroed.
    pub fn energy_grad(&self, values: &[f64], grad: &mut [f64]) -> f64 {
        let mesh = self.mesh;
        let m = self.m();
        let n = mesh.dim();
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut f = vec![0.0; m * n];
        let mut df = vec![0.0; m * n];
        let mut total = 0.0;
        for e in 0..mesh.n_elements() {
            mesh.element_gradient(e, values, m, &mut f);
            for (b, x) in f.iter_mut().zip(self.xi) {
                *b += x;
            }
            let w = self.density.value_grad(mesh.centroid(e), &f, &mut df);
            if !w.is_finite() {
                return f64::INFINITY;
            }
            let vol = mesh.volume(e);
            total += vol * w;
            // chain rule through the path differences
            let (verts, axis, step) = mesh.element_path(e);
            for k in 0..n {
                let a = axis[k] as usize;
                let v0 = verts[k] as usize * m;
                let v1 = verts[k + 1] as usize * m;
                for c in 0..m {
                    let g = vol * df[c * n + a] / step[k];
                    grad[v1 + c] += g;
                    grad[v0 + c] -= g;
                }
            }
        }
        for v in 0..mesh.n_vertices() {
            if mesh.is_boundary(v) {
                grad[v * m..(v + 1) * m].iter_mut().for_each(|g| *g = 0.0);
            }
        }
        total
    }

    fn local_energy(&self, v: usize, values: &[f64], buf: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for &e in self.mesh.incident_elements(v) {
            total += self.element_energy(e as usize, values, buf);
        }
        total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentOptions {
    /// Stop when the relative decrease over `window` iterations is below this.
    pub rel_tol: f64,
    pub window: usize,
    pub max_iters: usize,
    pub memory: usize,
    /// Rounds of (quasi-Newton, pattern sweep).
    pub max_cycles: usize,
    pub pattern_sweeps: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-6, window: 50, max_iters: 3000, memory: 10, max_cycles: 3, pattern_sweeps: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentOutcome {
    pub field: DisplacementField,
    pub energy: f64,
    pub start_energy: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn min_step(mesh: &CellMesh) -> f64 {
    mesh.axes().iter().flat_map(|a| a.windows(2).map(|w| w[1] - w[0])).fold(f64::INFINITY, f64::min)
}

struct Lbfgs {
    iterations: usize,
    converged: bool,
}

fn lbfgs<D: Density + ?Sized>(problem: &Problem<D>, x: &mut [f64], energy: &mut f64, opts: &DescentOptions) -> Lbfgs {
    let len = x.len();
    let h = min_step(problem.mesh);
    let mut g = vec![0.0; len];
    let e0 = problem.energy_grad(x, &mut g);
    if !e0.is_finite() {
        return Lbfgs { iterations: 0, converged: false };
    }
    *energy = e0;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut rho: Vec<f64> = Vec::new();
    let mut history = vec![*energy];
    let mut d = vec![0.0; len];
    let mut trial = vec![0.0; len];
    let mut g_new = vec![0.0; len];
    let mut alpha = vec![0.0; opts.memory];

    for it in 0..opts.max_iters {
        let gmax = g.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if gmax <= 1e-14 * (1.0 + energy.abs()) {
            return Lbfgs { iterations: it, converged: true };
        }
        // two-loop recursion
        d.copy_from_slice(&g);
        let k = s_hist.len();
        for i in (0..k).rev() {
            alpha[i] = rho[i] * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * yj;
            }
        }
        let scale = if k > 0 {
            dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1])
        } else {
            0.1 * h / gmax
        };
        d.iter_mut().for_each(|v| *v *= scale);
        for i in 0..k {
            let beta = rho[i] * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - beta) * sj;
            }
        }
        d.iter_mut().for_each(|v| *v = -*v);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            let c = 0.1 * h / gmax;
            for (dj, gj) in d.iter_mut().zip(&g) {
                *dj = -c * gj;
            }
            slope = dot(&g, &d);
        }

        // backtracking; infinite trial energies are rejected like any other
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            for ((tr, xi), di) in trial.iter_mut().zip(x.iter()).zip(&d) {
                *tr = xi + t * di;
            }
            let e = problem.energy_grad(&trial, &mut g_new);
            if e.is_finite() && e <= *energy + 1e-4 * t * slope {
                accepted = Some(e);
                break;
            }
            t *= 0.5;
        }
        let Some(e_new) = accepted else {
            if s_hist.is_empty() {
                return Lbfgs { iterations: it, converged: false };
            }
            s_hist.clear();
            y_hist.clear();
            rho.clear();
            continue;
        };

        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho.remove(0);
            }
            rho.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(y);
        }
        x.copy_from_slice(&trial);
        g.copy_from_slice(&g_new);
        *energy = e_new;
        history.push(e_new);
        if history.len() > opts.window {
            let old = history[history.len() - 1 - opts.window];
            if old - e_new <= opts.rel_tol * e_new.abs().max(1e-10) {
                return Lbfgs { iterations: it + 1, converged: true };
            }
        }
    }
    Lbfgs { iterations: opts.max_iters, converged: false }
}

/// Coordinate sweeps with halving step; returns whether anything moved.
fn pattern_search<D: Density + ?Sized>(problem: &Problem<D>, x: &mut [f64], opts: &DescentOptions) -> bool {
    let mesh = problem.mesh;
    let m = problem.m();
    let h = min_step(mesh);
    let mut buf = vec![0.0; problem.xi.len()];
    let mut moved = false;
    let mut delta = 0.25 * h;
    let mut sweeps = 0;
    while delta > 1e-4 * h && sweeps < opts.pattern_sweeps {
        let mut accepted = 0;
        for v in 0..mesh.n_vertices() {
            if mesh.is_boundary(v) {
                continue;
            }
            for c in 0..m {
                let i = v * m + c;
                let base = problem.local_energy(v, x, &mut buf);
                let orig = x[i];
                let mut best = (base, orig);
                for step in [delta, -delta] {
                    x[i] = orig + step;
                    let e = problem.local_energy(v, x, &mut buf);
                    if e.is_finite() && e < best.0 - 1e-15 * base.abs() {
                        best = (e, orig + step);
                    }
                }
                x[i] = best.1;
                if best.1 != orig {
                    accepted += 1;
                }
            }
        }
        sweeps += 1;
        if accepted == 0 {
            delta *= 0.5;
        } else {
            moved = true;
        }
    }
    moved
}

/// Local minimization from one start.
pub fn minimize<D: Density + ?Sized>(problem: &Problem<D>, start: &DisplacementField, opts: &DescentOptions) -> DescentOutcome {
    let mut x = start.values.clone();
    let mesh = problem.mesh;
    let m = start.m;
    for v in 0..mesh.n_vertices() {
        if mesh.is_boundary(v) {
            x[v * m..(v + 1) * m].iter_mut().for_each(|u| *u = 0.0);
        }
    }
    let start_energy = problem.energy(&x);
    if !start_energy.is_finite() {
        return DescentOutcome {
            field: DisplacementField { m, values: x },
            energy: f64::INFINITY,
            start_energy,
            iterations: 0,
            converged: false,
        };
    }
    let mut energy = start_energy;
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_cycles {
        let run = lbfgs(problem, &mut x, &mut energy, opts);
        iterations += run.iterations;
        converged = run.converged;
        let before = problem.energy(&x);
        if !pattern_search(problem, &mut x, opts) {
            energy = before;
            break;
        }
        energy = problem.energy(&x);
        if before - energy <= opts.rel_tol * energy.abs().max(1e-10) {
            break;
        }
    }
    DescentOutcome { field: DisplacementField { m, values: x }, energy, start_energy, iterations, converged }
}

/// Results of a multi-start run; `best` indexes `outcomes`, ties going to
/// the lowest index.
#[derive(Debug, Clone)]
pub struct MultiStart {
    pub outcomes: Vec<DescentOutcome>,
    pub best: usize,
}

impl MultiStart {
    pub fn best(&self) -> &DescentOutcome {
        &self.outcomes[self.best]
    }

    pub fn energies(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.energy).collect()
    }
}

pub fn multistart<D: Density + ?Sized>(problem: &Problem<D>, starts: &[DisplacementField], opts: &DescentOptions) -> MultiStart {
    let outcomes: Vec<DescentOutcome> = starts.par_iter().map(|s| minimize(problem, s, opts)).collect();
    let mut best = 0;
    for (i, o) in outcomes.iter().enumerate() {
        if o.energy < outcomes[best].energy {
            best = i;
        }
    }
    MultiStart { outcomes, best }
}

/// Triangle wave of unit slope and period `2·width`, zero at multiples of
/// the period.
pub fn sawtooth(t: f64, width: f64) -> f64 {
    let r = t.rem_euclid(2.0 * width);
    if r <= width {
        r
    } else {
        2.0 * width - r
    }
}

/// The default start set: the zero field, sawtooth laminates of slope
/// 0.5, 1 and 2, then Gaussian vertex fields of amplitude `1/mesh-n`.
pub fn standard_starts(mesh: &CellMesh, m: usize, count: usize, seed: u64, subdivisions: usize) -> Vec<DisplacementField> {
    let n = mesh.dim();
    let width = 1.0 / subdivisions as f64;
    let mut starts = vec![DisplacementField::zeros(mesh, m)];
    for (i, amp) in [0.5, 1.0, 2.0].into_iter().enumerate() {
        if starts.len() >= count {
            break;
        }
        let (a, b) = (i % m, i % n);
        starts.push(DisplacementField::from_fn(mesh, m, |p| {
            let mut v = vec![0.0; m];
            v[a] = amp * sawtooth(p[b], width);
            v
        }));
    }
    for r in 0..count.saturating_sub(4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(r as u64 + 1)));
        starts.push(DisplacementField::from_fn(mesh, m, |_| {
            (0..m).map(|_| width * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)).collect()
        }));
    }
    starts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrand::CoefficientField;

    #[test]
    fn gradient_matches_finite_differences() {
        let spec = IntegrandSpec::double_well(2, 2, CoefficientField::constant(1.5));
        let mesh = CellMesh::uniform(2, 4, 1.0).unwrap();
        let density = FrozenDensity { spec: &spec, x: vec![0.0, 0.0] };
        let xi = [0.3, -0.2, 0.1, 0.7];
        let problem = Problem { mesh: &mesh, density: &density, xi: &xi };
        let field = DisplacementField::from_fn(&mesh, 2, |p| vec![(3.0 * p[0]).sin() * p[1], p[0] * p[1]]);
        let mut g = vec![0.0; field.values.len()];
        problem.energy_grad(&field.values, &mut g);
        for i in 0..field.values.len() {
            let v = i / 2;
            if mesh.is_boundary(v) {
                assert_eq!(g[i], 0.0);
                continue;
            }
            let mut up = field.values.clone();
            up[i] += 1e-6;
            let mut down = field.values.clone();
            down[i] -= 1e-6;
            let fd = (problem.energy(&up) - problem.energy(&down)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn convex_energy_stays_at_zero_field() {
        let spec = IntegrandSpec::power(2, 2, 2.0, CoefficientField::constant(1.0));
        let mesh = CellMesh::uniform(2, 6, 1.0).unwrap();
        let density = FrozenDensity { spec: &spec, x: vec![0.0, 0.0] };
        let xi = [1.0, 0.0, 0.0, 1.0];
        let problem = Problem { mesh: &mesh, density: &density, xi: &xi };
        let starts = standard_starts(&mesh, 2, 6, 1, 6);
        let run = multistart(&problem, &starts, &DescentOptions::default());
        assert!((run.best().energy - 2.0).abs() < 1e-6, "{}", run.best().energy);
    }

    #[test]
    fn double_well_relaxes_to_zero() {
        let spec = IntegrandSpec::double_well(1, 1, CoefficientField::constant(1.0));
        let mesh = CellMesh::uniform(1, 32, 1.0).unwrap();
        let density = FrozenDensity { spec: &spec, x: vec![0.0] };
        let problem = Problem { mesh: &mesh, density: &density, xi: &[0.0] };
        let starts = standard_starts(&mesh, 1, 8, 3, 32);
        let run = multistart(&problem, &starts, &DescentOptions::default());
        assert!(run.best().energy < 1e-6, "{}", run.best().energy);
        assert_eq!(run.outcomes[0].start_energy, 1.0);
    }

    #[test]
    fn infeasible_start_reports_infinity() {
        let spec = IntegrandSpec::h_form(
            2,
            2.0,
            CoefficientField::constant(1.0),
            crate::integrand::HProfile::standard(1.0, 1.0),
        );
        let mesh = CellMesh::uniform(2, 4, 1.0).unwrap();
        let density = FrozenDensity { spec: &spec, x: vec![0.0, 0.0] };
        let problem = Problem { mesh: &mesh, density: &density, xi: &[0.0; 4] };
        let out = minimize(&problem, &DisplacementField::zeros(&mesh, 2), &DescentOptions::default());
        assert_eq!(out.energy, f64::INFINITY);
    }

    #[test]
    fn starts_are_seeded() {
        let mesh = CellMesh::uniform(2, 8, 1.0).unwrap();
        let a = standard_starts(&mesh, 2, 6, 9, 8);
        let b = standard_starts(&mesh, 2, 6, 9, 8);
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
        assert!(a.iter().all(|f| f.boundary_is_zero(&mesh)));
        assert_ne!(standard_starts(&mesh, 2, 6, 10, 8)[5], a[5]);
    }
}
