//! Zero-boundary piecewise-affine fields realizing a laminate on the unit cell.
//!
//! Each split lives in a box. Along its axis b = e_j the field is a·g(y_j),
//! with g a sawtooth of slopes s₊ then s₋ vanishing at every period end. On
//! the faces of the box normal to the other axes the sawtooth is cut off to
//! zero across one mesh cell. Children that split again get the sub-box of
//! their slope segment, shrunk by the cutoff bands.

use serde::{Deserialize, Serialize};

use super::tree::LaminateTree;
use crate::error::{Error, Result};
use crate::integrand::{det_square, MatrixMN};
use crate::mesh::{CellMesh, DisplacementField};

/// A laminate field together with its mesh and the element → leaf map.
#[derive(Debug, Clone)]
pub struct LaminateField {
    pub xi: MatrixMN,
    pub mesh_n: usize,
    pub mesh: CellMesh,
    pub field: DisplacementField,
    /// Leaf matrices in depth-first order.
    pub leaves: Vec<MatrixMN>,
    /// Leaf whose gradient the element carries; `None` inside cutoff bands.
    pub leaf_of_element: Vec<Option<u32>>,
    pub layer_volume: f64,
    /// Elements inside the leaf region whose gradient failed verification.
    pub mismatched: usize,
}

/// Determinant histogram of ξ + ∇φ over the leaf region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetHistogram {
    /// (determinant, volume), sorted by determinant.
    pub bins: Vec<(f64, f64)>,
    pub layer_volume: f64,
}

struct Piece {
    a: Vec<f64>,
    axis: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    knots: Vec<(f64, f64)>,
}

enum Plan {
    Leaf(u32),
    Split { axis: usize, lo: Vec<f64>, hi: Vec<f64>, breaks: Vec<f64>, seg_child: Vec<usize>, children: Box<[Plan; 2]> },
}

struct Planner {
    h: f64,
    pieces: Vec<Piece>,
    extra: Vec<Vec<f64>>,
    leaves: Vec<MatrixMN>,
}

impl Planner {
    fn plan(&mut self, node: &LaminateTree, lo: Vec<f64>, hi: Vec<f64>) -> Result<Plan> {
        let LaminateTree::Split { a, s_minus, s_plus, lambda, children, .. } = node else {
            self.leaves.push(node.matrix().clone());
            return Ok(Plan::Leaf(self.leaves.len() as u32 - 1));
        };
        let axis = node
            .axis()
            .ok_or_else(|| Error::ConstructionFailure("field construction needs coordinate lamination normals".into()))?;
        let h = self.h;
        let dim = lo.len();
        for i in (0..dim).filter(|&i| i != axis) {
            if hi[i] - lo[i] < 3.0 * h * (1.0 - 1e-9) {
                return Err(Error::InfeasibleMesh(format!(
                    "box side {:.4e} along axis {i} leaves no room for cutoff bands of width {h:.4e}",
                    hi[i] - lo[i]
                )));
            }
        }
        let len = hi[axis] - lo[axis];
        let leaf_children = children.iter().all(|c| c.is_leaf());
        let periods = if leaf_children { ((len / (4.0 * h)).round() as usize).max(1) } else { 1 };
        let period = len / periods as f64;
        let rise = (1.0 - lambda) * period;
        let mut knots = Vec::with_capacity(2 * periods + 1);
        let mut breaks = Vec::with_capacity(2 * periods + 1);
        let mut seg_child = Vec::with_capacity(2 * periods);
        for k in 0..periods {
            let start = lo[axis] + k as f64 * period;
            knots.push((start, 0.0));
            knots.push((start + rise, rise * s_plus));
            breaks.push(start);
            breaks.push(start + rise);
            seg_child.push(1);
            seg_child.push(0);
        }
        knots.push((hi[axis], 0.0));
        breaks.push(hi[axis]);

        self.extra[axis].extend(breaks.iter().copied());
        for i in (0..dim).filter(|&i| i != axis) {
            self.extra[i].extend([lo[i], lo[i] + h, hi[i] - h, hi[i]]);
        }
        self.pieces.push(Piece { a: a.clone(), axis, lo: lo.clone(), hi: hi.clone(), knots });
        debug_assert!((lambda * s_minus + (1.0 - lambda) * s_plus).abs() <= 1e-12 * s_plus.abs().max(1.0));

        let sub_box = |seg: usize| {
            let mut l = lo.clone();
            let mut u = hi.clone();
            for i in (0..dim).filter(|&i| i != axis) {
                l[i] += h;
                u[i] -= h;
            }
            l[axis] = breaks[seg];
            u[axis] = breaks[seg + 1];
            (l, u)
        };
        // with one period, segment 0 rises (child 1) and segment 1 falls (child 0)
        let (l0, u0) = sub_box(if periods == 1 { 1 } else { 0 });
        let (l1, u1) = sub_box(0);
        let first = self.plan(&children[0], l0, u0)?;
        let second = self.plan(&children[1], l1, u1)?;
        Ok(Plan::Split { axis, lo, hi, breaks, seg_child, children: Box::new([first, second]) })
    }
}

fn assign(plan: &Plan, c: &[f64], h: f64) -> Option<u32> {
    match plan {
        Plan::Leaf(i) => Some(*i),
        Plan::Split { axis, lo, hi, breaks, seg_child, children } => {
            for i in 0..c.len() {
                let (l, u) = if i == *axis { (lo[i], hi[i]) } else { (lo[i] + h, hi[i] - h) };
                if !(c[i] > l && c[i] < u) {
                    return None;
                }
            }
            let seg = breaks.partition_point(|b| *b <= c[*axis]).checked_sub(1)?;
            let child = *seg_child.get(seg)?;
            assign(&children[child], c, h)
        }
    }
}

fn ramp(y: f64, lo: f64, hi: f64, h: f64) -> f64 {
    ((y - lo) / h).min((hi - y) / h).clamp(0.0, 1.0)
}

fn profile(knots: &[(f64, f64)], t: f64) -> f64 {
    let first = knots[0].0;
    let last = knots[knots.len() - 1].0;
    if t <= first || t >= last {
        return 0.0;
    }
    let k = knots.partition_point(|(x, _)| *x <= t) - 1;
    let (x0, v0) = knots[k];
    let (x1, v1) = knots[k + 1];
    v0 + (v1 - v0) * (t - x0) / (x1 - x0)
}

impl Piece {
    fn eval(&self, y: &[f64], h: f64, out: &mut [f64]) {
        let g = profile(&self.knots, y[self.axis]);
        if g == 0.0 {
            return;
        }
        let mut chi = 1.0;
        for i in (0..y.len()).filter(|&i| i != self.axis) {
            chi *= ramp(y[i], self.lo[i], self.hi[i], h);
        }
        if chi == 0.0 {
            return;
        }
        for (o, a) in out.iter_mut().zip(&self.a) {
            *o += a * g * chi;
        }
    }
}

/// Materializes `tree` on a tensor mesh of Y that contains the uniform
/// `mesh_n` grid and every kink of the construction.
pub fn laminate_field_build(xi: &MatrixMN, tree: &LaminateTree, mesh_n: usize, layer_budget: f64) -> Result<LaminateField> {
    if tree.matrix() != xi {
        return Err(Error::InvalidInput("tree root does not match xi".into()));
    }
    let depth = tree.depth();
    if mesh_n < 2 * (1 << depth) {
        return Err(Error::InfeasibleMesh(format!("mesh-n {mesh_n} < 2·2^depth = {}", 2 * (1usize << depth))));
    }
    let (m, n) = (xi.rows(), xi.cols());
    let h = 1.0 / mesh_n as f64;
    let mut planner = Planner { h, pieces: Vec::new(), extra: vec![Vec::new(); n], leaves: Vec::new() };
    let plan = planner.plan(tree, vec![0.0; n], vec![1.0; n])?;
    let mesh = CellMesh::refined_uniform(n, mesh_n, 1.0, &planner.extra)?;
    let pieces = planner.pieces;
    let field = DisplacementField::from_fn(&mesh, m, |y| {
        let mut v = vec![0.0; m];
        for p in &pieces {
            p.eval(y, h, &mut v);
        }
        v
    });

    let leaves = planner.leaves;
    let targets: Vec<MatrixMN> = leaves.iter().map(|l| l.sub(xi)).collect();
    let mut leaf_of_element = Vec::with_capacity(mesh.n_elements());
    let mut grad = vec![0.0; m * n];
    let mut layer_volume = 0.0;
    let mut mismatched = 0;
    for e in 0..mesh.n_elements() {
        let assigned = assign(&plan, mesh.centroid(e), h).filter(|&leaf| {
            mesh.element_gradient(e, &field.values, m, &mut grad);
            let want = targets[leaf as usize].entries();
            let scale = 1.0 + want.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let ok = grad.iter().zip(want).all(|(g, w)| (g - w).abs() <= 1e-8 * scale);
            if !ok {
                mismatched += 1;
            }
            ok
        });
        if assigned.is_none() {
            layer_volume += mesh.volume(e);
        }
        leaf_of_element.push(assigned);
    }
    if layer_volume > layer_budget {
        return Err(Error::InfeasibleMesh(format!(
            "cutoff layer volume {layer_volume:.4} exceeds budget {layer_budget} at mesh-n {mesh_n}"
        )));
    }
    Ok(LaminateField { xi: xi.clone(), mesh_n, mesh, field, leaves, leaf_of_element, layer_volume, mismatched })
}

impl LaminateField {
    /// det(ξ + ∇φ) per element.
    pub fn element_dets(&self) -> Vec<f64> {
        let (m, n) = (self.xi.rows(), self.xi.cols());
        let mut grad = vec![0.0; m * n];
        (0..self.mesh.n_elements())
            .map(|e| {
                self.mesh.element_gradient(e, &self.field.values, m, &mut grad);
                for (g, x) in grad.iter_mut().zip(self.xi.entries()) {
                    *g += x;
                }
                det_square(&grad, n)
            })
            .collect()
    }

    /// Measured determinants on the leaf region, merged within 1e-9.
    pub fn det_histogram(&self) -> DetHistogram {
        let dets = self.element_dets();
        let mut pairs: Vec<(f64, f64)> = dets
            .iter()
            .zip(&self.leaf_of_element)
            .enumerate()
            .filter(|(_, (_, leaf))| leaf.is_some())
            .map(|(e, (d, _))| (*d, self.mesh.volume(e)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut bins: Vec<(f64, f64)> = Vec::new();
        for (d, v) in pairs {
            match bins.last_mut() {
                Some(last) if (d - last.0).abs() <= 1e-9 * (1.0 + d.abs()) => last.1 += v,
                _ => bins.push((d, v)),
            }
        }
        DetHistogram { bins, layer_volume: self.layer_volume }
    }

    /// Volume of Y where det(ξ + ∇φ) is within `tol` of one of `targets`.
    pub fn volume_with_dets(&self, targets: &[f64], tol: f64) -> f64 {
        self.element_dets()
            .iter()
            .enumerate()
            .filter(|(_, d)| targets.iter().any(|t| (*d - t).abs() <= tol))
            .map(|(e, _)| self.mesh.volume(e))
            .sum()
    }
}
