//! Simplicial meshes of boxes and continuous piecewise-affine fields on them.
//!
//! A mesh is the tensor product of per-axis node lists, each box cut into N!
//! Kuhn simplices (one per ordering of the axes). Along a simplex the vertex
//! path `v₀ → v₁ → … → v_N` steps once along every axis, so the gradient of a
//! vertex-interpolated field is read off from N differences.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Simplicial decomposition of the box `[0, L₁] × … × [0, L_N]`.
#[derive(Debug, Clone)]
pub struct CellMesh {
    dim: usize,
    axes: Vec<Vec<f64>>,
    strides: Vec<usize>,
    n_vertices: usize,
    // per element, flattened
    elem_verts: Vec<u32>,
    elem_axis: Vec<u8>,
    elem_step: Vec<f64>,
    elem_volume: Vec<f64>,
    elem_centroid: Vec<f64>,
    boundary: Vec<bool>,
    // vertex → incident elements (CSR)
    adj_offsets: Vec<usize>,
    adj_elems: Vec<u32>,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for rest in permutations(n - 1) {
        for pos in 0..=rest.len() {
            let mut p = rest.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

impl CellMesh {
    /// `subdivisions` equal cells per axis on `[0, extent]^dim`.
    pub fn uniform(dim: usize, subdivisions: usize, extent: f64) -> Result<Self> {
        if subdivisions == 0 {
            return invalid("mesh needs at least one subdivision per axis");
        }
        let axis: Vec<f64> = (0..=subdivisions).map(|i| extent * i as f64 / subdivisions as f64).collect();
        Self::tensor(vec![axis; dim])
    }

    /// Tensor-product mesh from strictly increasing per-axis node lists.
    pub fn tensor(axes: Vec<Vec<f64>>) -> Result<Self> {
        let dim = axes.len();
        if dim == 0 {
            return invalid("mesh dimension must be positive");
        }
        for (i, a) in axes.iter().enumerate() {
            if a.len() < 2 || a.windows(2).any(|w| !(w[0] < w[1])) || a.iter().any(|v| !v.is_finite()) {
                return invalid(format!("axis {i} nodes must be finite, strictly increasing, at least two"));
            }
        }
        let counts: Vec<usize> = axes.iter().map(|a| a.len()).collect();
        let mut strides = vec![1; dim];
        for i in (0..dim.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        let n_vertices: usize = counts.iter().product();
        if n_vertices > u32::MAX as usize {
            return invalid("mesh too large");
        }

        let boundary: Vec<bool> = (0..n_vertices)
            .map(|v| (0..dim).any(|i| {
                let k = (v / strides[i]) % counts[i];
                k == 0 || k == counts[i] - 1
            }))
            .collect();

        let perms = permutations(dim);
        let n_boxes: usize = counts.iter().map(|c| c - 1).product();
        let n_elems = n_boxes * perms.len();
        let mut elem_verts = Vec::with_capacity(n_elems * (dim + 1));
        let mut elem_axis = Vec::with_capacity(n_elems * dim);
        let mut elem_step = Vec::with_capacity(n_elems * dim);
        let mut elem_volume = Vec::with_capacity(n_elems);
        let mut elem_centroid = Vec::with_capacity(n_elems * dim);
        let fact: f64 = (1..=dim).map(|k| k as f64).product();

        let mut idx = vec![0usize; dim];
        for _ in 0..n_boxes {
            let base: usize = idx.iter().zip(&strides).map(|(k, s)| k * s).sum();
            let widths: Vec<f64> = (0..dim).map(|i| axes[i][idx[i] + 1] - axes[i][idx[i]]).collect();
            let vol = widths.iter().product::<f64>() / fact;
            for perm in &perms {
                let mut v = base;
                let mut point: Vec<f64> = (0..dim).map(|i| axes[i][idx[i]]).collect();
                let mut centroid = point.clone();
                elem_verts.push(v as u32);
                for &ax in perm {
                    v += strides[ax];
                    point[ax] += widths[ax];
                    for (c, p) in centroid.iter_mut().zip(&point) {
                        *c += p;
                    }
                    elem_verts.push(v as u32);
                    elem_axis.push(ax as u8);
                    elem_step.push(widths[ax]);
                }
                elem_centroid.extend(centroid.iter().map(|c| c / (dim + 1) as f64));
                elem_volume.push(vol);
            }
            // odometer, last axis fastest
            for i in (0..dim).rev() {
                idx[i] += 1;
                if idx[i] < counts[i] - 1 {
                    break;
                }
                idx[i] = 0;
            }
        }

        let mut degree = vec![0usize; n_vertices];
        for &v in &elem_verts {
            degree[v as usize] += 1;
        }
        let mut adj_offsets = vec![0usize; n_vertices + 1];
        for v in 0..n_vertices {
            adj_offsets[v + 1] = adj_offsets[v] + degree[v];
        }
        let mut fill = adj_offsets.clone();
        let mut adj_elems = vec![0u32; adj_offsets[n_vertices]];
        for e in 0..n_elems {
            for &v in &elem_verts[e * (dim + 1)..(e + 1) * (dim + 1)] {
                adj_elems[fill[v as usize]] = e as u32;
                fill[v as usize] += 1;
            }
        }

        Ok(Self {
            dim,
            axes,
            strides,
            n_vertices,
            elem_verts,
            elem_axis,
            elem_step,
            elem_volume,
            elem_centroid,
            boundary,
            adj_offsets,
            adj_elems,
        })
    }

    /// Tensor mesh whose axes are the union of the uniform nodes and the
    /// given extra coordinates (inside the box).
    pub fn refined_uniform(dim: usize, subdivisions: usize, extent: f64, extra: &[Vec<f64>]) -> Result<Self> {
        let mut axes = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut nodes: Vec<f64> =
                (0..=subdivisions).map(|k| extent * k as f64 / subdivisions as f64).collect();
            if let Some(more) = extra.get(i) {
                nodes.extend(more.iter().copied().filter(|v| *v > 0.0 && *v < extent));
            }
            axes.push(merge_nodes(nodes, extent));
        }
        Self::tensor(axes)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    /// Extent of the box along each axis.
    pub fn extent(&self) -> Vec<f64> {
        self.axes.iter().map(|a| *a.last().unwrap() - a[0]).collect()
    }

    pub fn measure(&self) -> f64 {
        self.extent().iter().product()
    }

    #[inline]
    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    #[inline]
    pub fn n_elements(&self) -> usize {
        self.elem_volume.len()
    }

    #[inline]
    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    #[inline]
    pub fn volume(&self, e: usize) -> f64 {
        self.elem_volume[e]
    }

    #[inline]
    pub fn centroid(&self, e: usize) -> &[f64] {
        &self.elem_centroid[e * self.dim..(e + 1) * self.dim]
    }

    #[inline]
    pub fn element_vertices(&self, e: usize) -> &[u32] {
        &self.elem_verts[e * (self.dim + 1)..(e + 1) * (self.dim + 1)]
    }

    #[inline]
    pub(crate) fn element_path(&self, e: usize) -> (&[u32], &[u8], &[f64]) {
        let d = self.dim;
        (&self.elem_verts[e * (d + 1)..(e + 1) * (d + 1)], &self.elem_axis[e * d..(e + 1) * d], &self.elem_step[e * d..(e + 1) * d])
    }

    #[inline]
    pub fn incident_elements(&self, v: usize) -> &[u32] {
        &self.adj_elems[self.adj_offsets[v]..self.adj_offsets[v + 1]]
    }

    pub fn vertex_coords(&self, v: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.axes[i][(v / self.strides[i]) % self.axes[i].len()]).collect()
    }

    pub fn vertex_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(k, s)| k * s).sum()
    }

    /// Gradient (m×N, row-major) of the interpolated field on element `e`.
    #[inline]
    pub fn element_gradient(&self, e: usize, values: &[f64], m: usize, out: &mut [f64]) {
        let d = self.dim;
        let (verts, axis, step) = self.element_path(e);
        for k in 0..d {
            let a = axis[k] as usize;
            let v0 = verts[k] as usize * m;
            let v1 = verts[k + 1] as usize * m;
            for c in 0..m {
                out[c * d + a] = (values[v1 + c] - values[v0 + c]) / step[k];
            }
        }
    }

    /// Value at a point of the box of the field interpolated on this mesh.
    pub fn interpolate(&self, values: &[f64], m: usize, point: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut base = 0;
        let mut local = vec![0.0; d];
        for i in 0..d {
            let axis = &self.axes[i];
            let x = point[i].clamp(axis[0], *axis.last().unwrap());
            let k = axis.partition_point(|v| *v <= x).clamp(1, axis.len() - 1) - 1;
            local[i] = (x - axis[k]) / (axis[k + 1] - axis[k]);
            base += k * self.strides[i];
        }
        // Freudenthal: walk the axes in decreasing local coordinate
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| local[b].total_cmp(&local[a]).then(a.cmp(&b)));
        let mut out: Vec<f64> = values[base * m..base * m + m].to_vec();
        let mut v = base;
        for &ax in &order {
            let next = v + self.strides[ax];
            for c in 0..m {
                out[c] += local[ax] * (values[next * m + c] - values[v * m + c]);
            }
            v = next;
        }
        out
    }
}

/// Sorts and merges nodes closer than a relative 1e-12 of the extent.
pub(crate) fn merge_nodes(mut nodes: Vec<f64>, extent: f64) -> Vec<f64> {
    nodes.sort_by(f64::total_cmp);
    let tol = 1e-12 * extent.abs().max(1.0);
    let mut out: Vec<f64> = Vec::with_capacity(nodes.len());
    for v in nodes {
        match out.last() {
            Some(last) if v - last <= tol => {}
            _ => out.push(v),
        }
    }
    // keep the exact end points
    if let Some(last) = out.last_mut() {
        *last = extent;
    }
    out
}

/// Vertex values of a piecewise-affine map into ℝ^m, vertex-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementField {
    pub m: usize,
    pub values: Vec<f64>,
}

impl DisplacementField {
    pub fn zeros(mesh: &CellMesh, m: usize) -> Self {
        Self { m, values: vec![0.0; mesh.n_vertices() * m] }
    }

    pub fn from_fn(mesh: &CellMesh, m: usize, mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(mesh.n_vertices() * m);
        for v in 0..mesh.n_vertices() {
            if mesh.is_boundary(v) {
                values.extend(std::iter::repeat_n(0.0, m));
            } else {
                values.extend(f(&mesh.vertex_coords(v)));
            }
        }
        Self { m, values }
    }

    pub fn check(&self, mesh: &CellMesh) -> Result<()> {
        if self.values.len() != mesh.n_vertices() * self.m {
            return invalid(format!(
                "field has {} values, mesh has {} vertices × {} components",
                self.values.len(),
                mesh.n_vertices(),
                self.m
            ));
        }
        Ok(())
    }

    pub fn boundary_is_zero(&self, mesh: &CellMesh) -> bool {
        (0..mesh.n_vertices())
            .filter(|&v| mesh.is_boundary(v))
            .all(|v| self.values[v * self.m..(v + 1) * self.m].iter().all(|x| *x == 0.0))
    }

    /// Interpolates this field (living on `from`) at the vertices of `to`,
    /// zeroing boundary vertices of `to`. Exact when `to` refines `from`.
    pub fn resample(&self, from: &CellMesh, to: &CellMesh) -> Self {
        let scale: Vec<f64> = from.extent().iter().zip(to.extent()).map(|(a, b)| a / b).collect();
        Self::from_fn(to, self.m, |p| {
            let q: Vec<f64> = p.iter().zip(&scale).map(|(x, s)| x * s).collect();
            from.interpolate(&self.values, self.m, &q)
        })
    }

    /// k-fold periodic extension of a field on the unit box to `[0, k]^N`
    /// (mesh `to` must have k times the unit cell's nodes per axis).
    pub fn periodic_extension(&self, from: &CellMesh, to: &CellMesh) -> Self {
        let ext: Vec<f64> = from.extent();
        Self::from_fn(to, self.m, |p| {
            let q: Vec<f64> = p.iter().zip(&ext).map(|(x, l)| x - (x / l).floor() * l).collect();
            from.interpolate(&self.values, self.m, &q)
        })
    }

    /// L^p norm of the gradient, (∫|∇φ|^p)^(1/p), Frobenius pointwise.
    pub fn gradient_lp_norm_pow(&self, mesh: &CellMesh, p: f64) -> f64 {
        let mut g = vec![0.0; self.m * mesh.dim()];
        (0..mesh.n_elements())
            .map(|e| {
                mesh.element_gradient(e, &self.values, self.m, &mut g);
                let sq: f64 = g.iter().map(|v| v * v).sum();
                mesh.volume(e) * if sq == 0.0 { 0.0 } else { sq.powf(0.5 * p) }
            })
            .sum()
    }
}

/// JSON export: per-axis nodes plus vertex values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FieldExport {
    pub axes: Vec<Vec<f64>>,
    pub m: usize,
    pub values: Vec<f64>,
}

impl FieldExport {
    pub fn new(mesh: &CellMesh, field: &DisplacementField) -> Self {
        Self { axes: mesh.axes().to_vec(), m: field.m, values: field.values.clone() }
    }
}
