//! Rank-one convex envelope on a lattice of matrices, and the 1D convex
//! envelope used to check it.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrand::MatrixMN;

/// Box and resolution of a matrix lattice: entry k ranges over
/// `lo[k] + i·(hi[k] − lo[k])/(nodes[k] − 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGrid {
    pub rows: usize,
    pub cols: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes: Vec<usize>,
}

impl MatrixGrid {
    /// Same range and resolution for every entry.
    pub fn cube(rows: usize, cols: usize, lo: f64, hi: f64, nodes: usize) -> Self {
        let k = rows * cols;
        Self { rows, cols, lo: vec![lo; k], hi: vec![hi; k], nodes: vec![nodes; k] }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.rows * self.cols;
        if k == 0 || self.lo.len() != k || self.hi.len() != k || self.nodes.len() != k {
            return Err(Error::InvalidInput(format!("grid needs {k} ranges and resolutions")));
        }
        if self.lo.iter().zip(&self.hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(Error::InvalidInput("grid ranges must be finite with lo < hi".into()));
        }
        if self.nodes.iter().any(|&n| n < 2) {
            return Err(Error::InvalidInput("grid needs at least two nodes per entry".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn step(&self, k: usize) -> f64 {
        (self.hi[k] - self.lo[k]) / (self.nodes[k] - 1) as f64
    }

    fn strides(&self) -> Vec<usize> {
        let k = self.nodes.len();
        let mut s = vec![1; k];
        for i in (0..k - 1).rev() {
            s[i] = s[i + 1] * self.nodes[i + 1];
        }
        s
    }

    fn index_of(&self, flat: usize) -> Vec<usize> {
        self.strides().iter().zip(&self.nodes).map(|(s, n)| (flat / s) % n).collect()
    }

    /// Entries of the node with flat index `flat`.
    pub fn point(&self, flat: usize) -> Vec<f64> {
        self.index_of(flat).iter().enumerate().map(|(k, &i)| self.lo[k] + i as f64 * self.step(k)).collect()
    }

    /// Flat index of the node nearest to `entries`, if inside the box.
    pub fn nearest(&self, entries: &[f64]) -> Option<usize> {
        let strides = self.strides();
        let mut flat = 0;
        for k in 0..self.nodes.len() {
            let t = (entries[k] - self.lo[k]) / self.step(k);
            let i = t.round();
            if i < 0.0 || i > (self.nodes[k] - 1) as f64 {
                return None;
            }
            flat += i as usize * strides[k];
        }
        Some(flat)
    }

    /// Lattice directions d ∈ {−1, 0, 1}^(mN), one per ± pair, whose matrix
    /// step (d_k·h_k) has rank one.
    fn rank_one_directions(&self) -> Vec<Vec<i32>> {
        let k = self.nodes.len();
        let total = 3usize.pow(k as u32);
        let mut out = Vec::new();
        for code in 1..total {
            let mut c = code;
            let d: Vec<i32> = (0..k)
                .map(|_| {
                    let v = (c % 3) as i32 - 1;
                    c /= 3;
                    v
                })
                .collect();
            // keep the representative whose first nonzero entry is positive
            if d.iter().find(|v| **v != 0).copied() != Some(1) {
                continue;
            }
            let step: Vec<f64> = d.iter().enumerate().map(|(i, v)| *v as f64 * self.step(i)).collect();
            let mat = MatrixMN::new(self.rows, self.cols, step).expect("finite");
            if mat.max_abs_2x2_minor() <= 1e-12 * mat.norm_sq() {
                out.push(d);
            }
        }
        out
    }
}

/// Tabulated rank-one convex envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixGridEnvelope {
    pub grid: MatrixGrid,
    /// Values per node (flat, last entry fastest); +∞ allowed.
    pub values: Vec<f64>,
    /// Iteration at which each node last decreased (0 = never).
    pub last_changed: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    /// Largest nodal decrease per iteration.
    pub decreases: Vec<f64>,
}

/// Lower convex hull of the finite points among (xs[i], ys[i]), evaluated
/// at every xs[i]; +∞ outside the finite range. `xs` must be increasing.
fn hull_on_line(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let mut hull: Vec<usize> = Vec::new();
    for i in (0..xs.len()).filter(|&i| ys[i].is_finite()) {
        while hull.len() >= 2 {
            let (a, b) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            // drop b if it lies on or above the chord a → i
            let cross = (xs[b] - xs[a]) * (ys[i] - ys[a]) - (ys[b] - ys[a]) * (xs[i] - xs[a]);
            if cross <= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(i);
    }
    let mut out = vec![f64::INFINITY; xs.len()];
    if hull.is_empty() {
        return out;
    }
    let mut seg = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x < xs[hull[0]] || *x > xs[*hull.last().unwrap()] {
            continue;
        }
        while seg + 1 < hull.len() - 1 && xs[hull[seg + 1]] < *x {
            seg += 1;
        }
        if hull.len() == 1 {
            out[i] = ys[hull[0]];
            continue;
        }
        let (a, b) = (hull[seg], hull[seg + 1]);
        out[i] = if i == a {
            ys[a]
        } else if i == b {
            ys[b]
        } else {
            ys[a] + (ys[b] - ys[a]) * (x - xs[a]) / (xs[b] - xs[a])
        };
        out[i] = out[i].min(ys[i]);
    }
    out
}

/// Jacobi iteration of lattice rank-one convexification: each sweep
/// replaces every node by the minimum over rank-one lattice lines of the
/// lower hull of the previous table along that line.
pub fn rconv_lattice(f: impl Fn(&MatrixMN) -> f64 + Sync, grid: &MatrixGrid, max_iters: usize, tol: f64) -> Result<MatrixGridEnvelope> {
    grid.validate()?;
    let total = grid.len();
    let mut values: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|i| f(&MatrixMN::new(grid.rows, grid.cols, grid.point(i)).expect("finite grid point")))
        .collect();
    let directions = grid.rank_one_directions();
    let strides = grid.strides();
    let mut last_changed = vec![0; total];
    let mut decreases = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    // lattice lines per direction, each starting where the predecessor leaves the grid
    let lines: Vec<Vec<usize>> = directions
        .iter()
        .flat_map(|d| {
            (0..total)
                .filter(|&flat| {
                    grid.index_of(flat).iter().zip(d).zip(&grid.nodes).any(|((i, di), n)| {
                        let j = *i as i64 - *di as i64;
                        j < 0 || j >= *n as i64
                    })
                })
                .map(|s| {
                    let mut line = vec![s];
                    let mut idx = grid.index_of(s);
                    'walk: loop {
                        for k in 0..idx.len() {
                            let j = idx[k] as i64 + d[k] as i64;
                            if j < 0 || j >= grid.nodes[k] as i64 {
                                break 'walk;
                            }
                            idx[k] = j as usize;
                        }
                        line.push(idx.iter().zip(&strides).map(|(i, s)| i * s).sum());
                    }
                    line
                })
                .filter(|line| line.len() >= 3)
                .collect::<Vec<_>>()
        })
        .collect();

    for it in 1..=max_iters {
        let prev = values.clone();
        let mut next = prev.clone();
        let updates: Vec<Vec<(usize, f64)>> = lines
            .par_iter()
            .map(|line| {
                let xs: Vec<f64> = (0..line.len()).map(|t| t as f64).collect();
                let ys: Vec<f64> = line.iter().map(|&n| prev[n]).collect();
                let hull = hull_on_line(&xs, &ys);
                line.iter().copied().zip(hull).filter(|(n, v)| *v < prev[*n]).collect()
            })
            .collect();
        for (node, v) in updates.into_iter().flatten() {
            if v < next[node] {
                next[node] = v;
            }
        }
        let mut biggest = 0.0f64;
        for i in 0..total {
            if next[i] < prev[i] {
                last_changed[i] = it;
                biggest = biggest.max(if prev[i].is_infinite() { f64::INFINITY } else { prev[i] - next[i] });
            }
        }
        values = next;
        iterations = it;
        decreases.push(biggest);
        if biggest < tol {
            converged = true;
            break;
        }
    }
    Ok(MatrixGridEnvelope { grid: grid.clone(), values, last_changed, iterations, converged, decreases })
}

impl MatrixGridEnvelope {
    /// Value at the node nearest to `xi`.
    pub fn value_at(&self, xi: &MatrixMN) -> Option<f64> {
        self.grid.nearest(xi.entries()).map(|i| self.values[i])
    }

    /// CSV: entry columns, value, iteration of last change.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        let k = self.grid.rows * self.grid.cols;
        let header: Vec<String> = (0..k).map(|i| format!("xi_{}{}", i / self.grid.cols + 1, i % self.grid.cols + 1)).collect();
        writeln!(w, "{},value,iteration", header.join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            let p: Vec<String> = self.grid.point(i).iter().map(|x| fmt_num(*x)).collect();
            writeln!(w, "{},{},{}", p.join(","), fmt_num(*v), self.last_changed[i])?;
        }
        Ok(())
    }
}

/// 17 significant digits; infinities as `inf`/`-inf`.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

/// Sampled convex envelope of a function of one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope1D {
    pub xs: Vec<f64>,
    pub f: Vec<f64>,
    pub hull: Vec<f64>,
}

impl Envelope1D {
    /// Piecewise-linear interpolation of the hull; +∞ outside its support.
    pub fn eval(&self, x: f64) -> f64 {
        let (first, last) = (self.xs[0], *self.xs.last().unwrap());
        if x < first || x > last {
            return f64::INFINITY;
        }
        let k = self.xs.partition_point(|v| *v <= x).clamp(1, self.xs.len() - 1) - 1;
        let (x0, x1) = (self.xs[k], self.xs[k + 1]);
        let (y0, y1) = (self.hull[k], self.hull[k + 1]);
        if !(y0.is_finite() && y1.is_finite()) {
            return if x == x0 { y0 } else if x == x1 { y1 } else { f64::INFINITY };
        }
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Lower convex hull of f sampled at `samples` equispaced points of
/// `[lo, hi]` (monotone chain over the finite samples).
pub fn conv_envelope_1d(f: impl Fn(f64) -> f64, lo: f64, hi: f64, samples: usize) -> Result<Envelope1D> {
    if samples < 2 || !(lo < hi) {
        return Err(Error::InvalidInput("need lo < hi and at least two samples".into()));
    }
    let xs: Vec<f64> = (0..samples).map(|i| lo + (hi - lo) * i as f64 / (samples - 1) as f64).collect();
    let fv: Vec<f64> = xs.iter().map(|&x| f(x)).collect();
    if fv.iter().filter(|v| v.is_finite()).count() < 2 {
        return Err(Error::Degenerate("fewer than two finite samples".into()));
    }
    let hull = hull_on_line(&xs, &fv);
    Ok(Envelope1D { xs, f: fv, hull })
}
