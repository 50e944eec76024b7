//! Recursive simple laminates driving the determinant onto two values.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrand::MatrixMN;

/// A finite rank-one lamination. The children of a split are
/// `ξ + s₋ a bᵀ` (weight λ) and `ξ + s₊ a bᵀ` (weight 1 − λ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "kebab-case")]
pub enum LaminateTree {
    Leaf {
        matrix: MatrixMN,
    },
    Split {
        matrix: MatrixMN,
        a: Vec<f64>,
        b: Vec<f64>,
        s_minus: f64,
        s_plus: f64,
        lambda: f64,
        children: Box<[LaminateTree; 2]>,
    },
}

impl LaminateTree {
    pub fn matrix(&self) -> &MatrixMN {
        match self {
            LaminateTree::Leaf { matrix } | LaminateTree::Split { matrix, .. } => matrix,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            LaminateTree::Leaf { .. } => 0,
            LaminateTree::Split { children, .. } => 1 + children[0].depth().max(children[1].depth()),
        }
    }

    pub fn is_leaf(&self) -> bool {
        matches!(self, LaminateTree::Leaf { .. })
    }

    /// Leaves in depth-first order (child₀ first) with their volume fractions.
    pub fn leaves(&self) -> Vec<(f64, &MatrixMN)> {
        let mut out = Vec::new();
        self.collect_leaves(1.0, &mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, weight: f64, out: &mut Vec<(f64, &'a MatrixMN)>) {
        match self {
            LaminateTree::Leaf { matrix } => out.push((weight, matrix)),
            LaminateTree::Split { lambda, children, .. } => {
                children[0].collect_leaves(weight * lambda, out);
                children[1].collect_leaves(weight * (1.0 - lambda), out);
            }
        }
    }

    /// Volume-weighted mean of the leaf matrices.
    pub fn barycenter(&self) -> MatrixMN {
        let m = self.matrix();
        let mut acc = MatrixMN::zeros(m.rows(), m.cols());
        for (w, leaf) in self.leaves() {
            acc = acc.add(&leaf.scaled(w));
        }
        acc
    }

    /// Index of the lamination axis when `b` is a coordinate vector.
    pub fn axis(&self) -> Option<usize> {
        match self {
            LaminateTree::Leaf { .. } => None,
            LaminateTree::Split { b, .. } => b.iter().position(|v| *v == 1.0),
        }
    }
}

/// Coordinate vector e_i in ℝ^n.
fn unit(n: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

/// Fixed quasi-uniform unit vectors: half-circle angles in 2D, a Fibonacci
/// hemisphere in 3D, seeded Gaussian directions beyond.
fn quasi_uniform(m: usize, count: usize) -> Vec<Vec<f64>> {
    match m {
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let t = PI * k as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * k as f64;
                    vec![r * t.cos(), r * t.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x1a3b);
            (0..count)
                .map(|_| {
                    let v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    v.into_iter().map(|x| x / norm).collect()
                })
                .collect()
        }
    }
}

const QUASI_UNIFORM_COUNT: usize = 64;

/// Candidate directions (a, b) with b a coordinate axis: coordinate pairs
/// first, then the cofactor-aligned a for each axis, then the fixed set.
fn candidates(xi: &MatrixMN, cof: &MatrixMN) -> Vec<(Vec<f64>, usize)> {
    let (m, n) = (xi.rows(), xi.cols());
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..m {
            out.push((unit(m, i), j));
        }
    }
    for j in 0..n {
        let col: Vec<f64> = (0..m).map(|i| cof.get(i, j)).collect();
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            out.push((col.into_iter().map(|v| v / norm).collect(), j));
        }
    }
    let fixed = quasi_uniform(m, QUASI_UNIFORM_COUNT);
    for j in 0..n {
        for a in &fixed {
            out.push((a.clone(), j));
        }
    }
    out
}

fn slope(cof: &MatrixMN, a: &[f64], j: usize) -> f64 {
    (0..a.len()).map(|i| a[i] * cof.get(i, j)).sum()
}

/// Best candidate by |c1|; a later candidate must beat the incumbent by a
/// relative 1e-12 so that ties keep the earlier one.
fn best_direction(xi: &MatrixMN) -> (Vec<f64>, usize, f64) {
    let cof = xi.cofactor().expect("square");
    let mut best: Option<(Vec<f64>, usize, f64)> = None;
    for (a, j) in candidates(xi, &cof) {
        let c1 = slope(&cof, &a, j);
        match &best {
            Some((_, _, b)) if c1.abs() <= b.abs() * (1.0 + 1e-12) => {}
            _ => best = Some((a, j, c1)),
        }
    }
    best.expect("at least one candidate")
}

fn max_slope(xi: &MatrixMN) -> f64 {
    best_direction(xi).2.abs()
}

/// Slopes below this (relative to |ξ|^(N−1)) count as zero.
fn slope_floor(xi: &MatrixMN) -> f64 {
    1e-12 * (1.0 + xi.norm()).powi(xi.rows() as i32 - 1)
}

/// Rank-one laminate whose leaves have determinant t₁ or t₂.
///
/// Splits along the (a, b) maximizing |⟨cof ξ, a bᵀ⟩|. Where the cofactor
/// vanishes the node is first split symmetrically, ξ = ½(ξ + abᵀ) + ½(ξ − abᵀ),
/// along the direction whose children have the largest cofactor slopes.
pub fn det_target_laminate(xi: &MatrixMN, t1: f64, t2: f64, max_depth: usize) -> Result<LaminateTree> {
    if !xi.is_square() {
        return Err(Error::InvalidInput(format!("laminate needs a square matrix, got {}x{}", xi.rows(), xi.cols())));
    }
    if !(t1.is_finite() && t2.is_finite()) {
        return Err(Error::InvalidInput("targets must be finite".into()));
    }
    let d = xi.det()?;
    if !(t1 < d && d < t2) {
        return Err(Error::Precondition(format!("need t1 < det xi < t2, got {t1} < {d} < {t2}")));
    }
    build(xi, t1, t2, max_depth)
}

fn build(xi: &MatrixMN, t1: f64, t2: f64, depth_left: usize) -> Result<LaminateTree> {
    if depth_left == 0 {
        return Err(Error::ConstructionFailure(format!(
            "depth cap reached at a node with det {} strictly inside ({t1}, {t2})",
            xi.det()?
        )));
    }
    let c0 = xi.det()?;
    let (a, j, c1) = best_direction(xi);
    let b = unit(xi.cols(), j);
    if c1.abs() > slope_floor(xi) {
        let (r1, r2) = ((t1 - c0) / c1, (t2 - c0) / c1);
        let (s_minus, s_plus) = if r1 < r2 { (r1, r2) } else { (r2, r1) };
        let lambda = s_plus / (s_plus - s_minus);
        let children = Box::new([
            LaminateTree::Leaf { matrix: xi.plus_rank_one(s_minus, &a, &b) },
            LaminateTree::Leaf { matrix: xi.plus_rank_one(s_plus, &a, &b) },
        ]);
        return Ok(LaminateTree::Split { matrix: xi.clone(), a, b, s_minus, s_plus, lambda, children });
    }

    // cofactor vanishes: symmetric preparatory split
    let cof = xi.cofactor()?;
    let mut choice: Option<(Vec<f64>, usize, f64)> = None;
    for (a, j) in candidates(xi, &cof) {
        let b = unit(xi.cols(), j);
        let score = max_slope(&xi.plus_rank_one(1.0, &a, &b)).min(max_slope(&xi.plus_rank_one(-1.0, &a, &b)));
        match &choice {
            Some((_, _, s)) if score <= s * (1.0 + 1e-12) => {}
            _ => choice = Some((a, j, score)),
        }
    }
    let (a, j, _) = choice.expect("at least one candidate");
    let b = unit(xi.cols(), j);
    let left = build(&xi.plus_rank_one(-1.0, &a, &b), t1, t2, depth_left - 1)?;
    let right = build(&xi.plus_rank_one(1.0, &a, &b), t1, t2, depth_left - 1)?;
    Ok(LaminateTree::Split {
        matrix: xi.clone(),
        a,
        b,
        s_minus: -1.0,
        s_plus: 1.0,
        lambda: 0.5,
        children: Box::new([left, right]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf_dets(tree: &LaminateTree) -> Vec<f64> {
        tree.leaves().iter().map(|(_, m)| m.det().unwrap()).collect()
    }

    #[test]
    fn identity_example() {
        let tree = det_target_laminate(&MatrixMN::identity(2), 0.5, 2.0, 3).unwrap();
        let LaminateTree::Split { a, b, s_minus, s_plus, lambda, .. } = &tree else { panic!() };
        assert_eq!((a.as_slice(), b.as_slice()), (&[1.0, 0.0][..], &[1.0, 0.0][..]));
        assert_eq!((*s_minus, *s_plus), (-0.5, 1.0));
        assert!((lambda - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(tree.depth(), 1);
        assert_eq!(leaf_dets(&tree), vec![0.5, 2.0]);
    }

    #[test]
    fn diagonal_example() {
        let xi = MatrixMN::diag(&[1.5, 1.0]);
        let tree = det_target_laminate(&xi, 0.5, 2.0, 3).unwrap();
        assert_eq!(tree.depth(), 1);
        let dets = leaf_dets(&tree);
        assert!((dets[0] - 0.5).abs() < 1e-12 && (dets[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_needs_two_levels() {
        let tree = det_target_laminate(&MatrixMN::zeros(2, 2), -1.0, 1.0, 3).unwrap();
        assert_eq!(tree.depth(), 2);
        let LaminateTree::Split { a, b, lambda, children, .. } = &tree else { panic!() };
        assert_eq!((a.as_slice(), b.as_slice(), *lambda), (&[1.0, 0.0][..], &[1.0, 0.0][..], 0.5));
        for child in children.iter() {
            assert_eq!(child.matrix().det().unwrap(), 0.0);
            let LaminateTree::Split { a, b, .. } = child else { panic!() };
            assert_eq!((a.as_slice(), b.as_slice()), (&[0.0, 1.0][..], &[0.0, 1.0][..]));
        }
        for d in leaf_dets(&tree) {
            assert!((d.abs() - 1.0).abs() < 1e-12);
        }
        let bary = tree.barycenter();
        assert!(bary.norm() < 1e-14);
    }

    #[test]
    fn errors() {
        let xi = MatrixMN::identity(2);
        assert!(matches!(det_target_laminate(&xi, 1.0, 2.0, 3), Err(Error::Precondition(_))));
        assert!(matches!(det_target_laminate(&MatrixMN::zeros(2, 3), -1.0, 1.0, 3), Err(Error::InvalidInput(_))));
        // the zero matrix cannot be laminated in one level
        assert!(matches!(det_target_laminate(&MatrixMN::zeros(2, 2), -1.0, 1.0, 1), Err(Error::ConstructionFailure(_))));
    }

    #[test]
    fn three_dimensional_zero() {
        let tree = det_target_laminate(&MatrixMN::zeros(3, 3), -2.0, 2.0, 3).unwrap();
        assert!(tree.depth() <= 3);
        for d in leaf_dets(&tree) {
            assert!((d + 2.0).abs() * (d - 2.0).abs() <= 1e-8, "{d}");
        }
        assert!(tree.barycenter().norm() < 1e-12);
    }
}
