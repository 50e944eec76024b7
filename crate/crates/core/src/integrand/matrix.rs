//! Dense real m×N matrices with the determinant/cofactor algebra needed by
//! the singular integrands and the laminate constructions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// A real m×N matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr")]
pub struct MatrixMN {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

#[derive(Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl TryFrom<MatrixRepr> for MatrixMN {
    type Error = crate::error::Error;

    fn try_from(r: MatrixRepr) -> Result<Self> {
        Self::new(r.rows, r.cols, r.entries)
    }
}

impl MatrixMN {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return invalid(format!("matrix dimensions must be positive, got {rows}x{cols}"));
        }
        if entries.len() != rows * cols {
            return invalid(format!(
                "a {rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            ));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return invalid("matrix entries must be finite");
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, entries: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.entries[i * n + i] = *v;
        }
        m
    }

    /// Builds a matrix from row slices. Panics on ragged input; meant for
    /// literals in tests and examples.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows[0].len();
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        Self { rows: r, cols: c, entries: rows.iter().flat_map(|row| row.iter().copied()).collect() }
    }

    /// Rank-one matrix a bᵀ.
    pub fn outer(a: &[f64], b: &[f64]) -> Self {
        let mut m = Self::zeros(a.len(), b.len());
        for (i, ai) in a.iter().enumerate() {
            for (j, bj) in b.iter().enumerate() {
                m.entries[i * b.len() + j] = ai * bj;
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    #[inline]
    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.cols + j] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// Frobenius norm.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_sq(&self) -> f64 {
        self.entries.iter().map(|v| v * v).sum()
    }

    /// |ξ|^p with the Frobenius norm; |0|^p = 0 for every p ≥ 1.
    pub fn norm_pow(&self, p: f64) -> f64 {
        let sq = self.norm_sq();
        if p == 2.0 {
            sq
        } else if sq == 0.0 {
            0.0
        } else {
            sq.powf(0.5 * p)
        }
    }

    /// Frobenius inner product.
    pub fn inner(&self, other: &Self) -> f64 {
        self.entries.iter().zip(&other.entries).map(|(a, b)| a * b).sum()
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert!(self.same_shape(other));
        let entries = self.entries.iter().zip(&other.entries).map(|(a, b)| a + b).collect();
        Self { rows: self.rows, cols: self.cols, entries }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert!(self.same_shape(other));
        let entries = self.entries.iter().zip(&other.entries).map(|(a, b)| a - b).collect();
        Self { rows: self.rows, cols: self.cols, entries }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, entries: self.entries.iter().map(|v| v * s).collect() }
    }

    /// ξ + s·a bᵀ.
    pub fn plus_rank_one(&self, s: f64, a: &[f64], b: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.entries[i * self.cols + j] += s * a[i] * b[j];
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.entries[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..other.cols {
                    out.entries[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| self.get(i, j) * v[j]).sum()).collect()
    }

    /// aᵀ ξ b.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                acc += a[i] * self.get(i, j) * b[j];
            }
        }
        acc
    }

    /// Largest absolute value of the 2×2 minors; zero iff rank ≤ 1.
    pub fn max_abs_2x2_minor(&self) -> f64 {
        let mut best: f64 = 0.0;
        for i in 0..self.rows {
            for k in (i + 1)..self.rows {
                for j in 0..self.cols {
                    for l in (j + 1)..self.cols {
                        let minor = self.get(i, j) * self.get(k, l) - self.get(i, l) * self.get(k, j);
                        best = best.max(minor.abs());
                    }
                }
            }
        }
        best
    }

    /// Determinant of a square matrix. Closed forms up to 3×3, partial-pivot
    /// LU beyond.
    pub fn det(&self) -> Result<f64> {
        if !self.is_square() {
            return invalid(format!("determinant needs a square matrix, got {}x{}", self.rows, self.cols));
        }
        Ok(det_square(&self.entries, self.rows))
    }

    /// Cofactor matrix, so that ξ·cofᵀ = det(ξ)·I.
    pub fn cofactor(&self) -> Result<Self> {
        if !self.is_square() {
            return invalid(format!("cofactor needs a square matrix, got {}x{}", self.rows, self.cols));
        }
        let n = self.rows;
        let mut entries = vec![0.0; n * n];
        cofactor_into(&self.entries, n, &mut entries);
        Ok(Self { rows: n, cols: n, entries })
    }

    pub fn det_and_cofactor(&self) -> Result<(f64, Self)> {
        Ok((self.det()?, self.cofactor()?))
    }
}

/// Determinant of the n×n row-major block `e`.
#[inline]
pub(crate) fn det_square(e: &[f64], n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => e[0],
        2 => e[0] * e[3] - e[1] * e[2],
        3 => {
            e[0] * (e[4] * e[8] - e[5] * e[7]) - e[1] * (e[3] * e[8] - e[5] * e[6])
                + e[2] * (e[3] * e[7] - e[4] * e[6])
        }
        _ => {
            let mut a = e.to_vec();
            let mut det = 1.0;
            for col in 0..n {
                let pivot = (col..n)
                    .max_by(|&r1, &r2| a[r1 * n + col].abs().total_cmp(&a[r2 * n + col].abs()))
                    .unwrap();
                if a[pivot * n + col] == 0.0 {
                    return 0.0;
                }
                if pivot != col {
                    for c in 0..n {
                        a.swap(pivot * n + c, col * n + c);
                    }
                    det = -det;
                }
                let p = a[col * n + col];
                det *= p;
                for r in (col + 1)..n {
                    let factor = a[r * n + col] / p;
                    if factor != 0.0 {
                        for c in col..n {
                            a[r * n + c] -= factor * a[col * n + c];
                        }
                    }
                }
            }
            det
        }
    }
}

/// Cofactor matrix of the n×n row-major block `e`, written into `out`.
pub(crate) fn cofactor_into(e: &[f64], n: usize, out: &mut [f64]) {
    match n {
        1 => out[0] = 1.0,
        2 => {
            out[0] = e[3];
            out[1] = -e[2];
            out[2] = -e[1];
            out[3] = e[0];
        }
        3 => {
            out[0] = e[4] * e[8] - e[5] * e[7];
            out[1] = e[5] * e[6] - e[3] * e[8];
            out[2] = e[3] * e[7] - e[4] * e[6];
            out[3] = e[2] * e[7] - e[1] * e[8];
            out[4] = e[0] * e[8] - e[2] * e[6];
            out[5] = e[1] * e[6] - e[0] * e[7];
            out[6] = e[1] * e[5] - e[2] * e[4];
            out[7] = e[2] * e[3] - e[0] * e[5];
            out[8] = e[0] * e[4] - e[1] * e[3];
        }
        _ => {
            let mut minor = vec![0.0; (n - 1) * (n - 1)];
            for i in 0..n {
                for j in 0..n {
                    let mut idx = 0;
                    for r in (0..n).filter(|&r| r != i) {
                        for c in (0..n).filter(|&c| c != j) {
                            minor[idx] = e[r * n + c];
                            idx += 1;
                        }
                    }
                    let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    out[i * n + j] = sign * det_square(&minor, n - 1);
                }
            }
        }
    }
}

/// Coefficients (c0, c1) with det(ξ + s·a bᵀ) = c0 + c1·s for every s.
///
/// The determinant is affine along rank-one lines: c0 = det ξ and
/// c1 = ⟨cof ξ, a bᵀ⟩.
pub fn rank_one_det_line(xi: &MatrixMN, a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if !xi.is_square() {
        return invalid("rank-one determinant line needs a square matrix");
    }
    if a.len() != xi.rows() || b.len() != xi.cols() {
        return invalid(format!(
            "direction lengths ({}, {}) do not match a {}x{} matrix",
            a.len(),
            b.len(),
            xi.rows(),
            xi.cols()
        ));
    }
    let (det, cof) = xi.det_and_cofactor()?;
    Ok((det, cof.bilinear(a, b)))
}
