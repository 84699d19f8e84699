//! Tensor-product Q1 grids on slabs `D x (-h, h)`.
//!
//! `D` is either the cube `(0, T)^d` with the lateral boundary clamped, or a
//! parallelogram period cell with periodic identification. In both cases the
//! in-plane elements are translates of one cell spanned by the columns of
//! `cell`, so all elements share the same reference data.

use crate::error::{invalid, Result};
use crate::linalg::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LateralBoundary {
    /// Zero displacement on `∂D x (-h, h)`.
    Clamped,
    /// Periodic in-plane; one node is pinned to remove the constant mode.
    Periodic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlabGrid {
    dim_d: usize,
    intervals: Vec<usize>,
    n_y: usize,
    h: f64,
    /// Element edge vectors (columns), `d x d`.
    cell: Mat,
    boundary: LateralBoundary,
    /// Side length for cube slabs; for period cells the cube root of the area.
    size: f64,
    n_per_unit: usize,
}

impl SlabGrid {
    /// Slab `(0, T)^d x (-h, h)` with `round(n_per_unit * T)` intervals per
    /// in-plane direction and `n_y` transverse intervals.
    pub fn slab(dim_d: usize, t: f64, h: f64, n_per_unit: usize, n_y: usize) -> Result<Self> {
        if !(1..=2).contains(&dim_d) {
            return Err(invalid(format!("d must be 1 or 2, got {dim_d}")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(invalid(format!("T must be > 0, got {t}")));
        }
        check_common(h, n_per_unit, n_y)?;
        let n = (n_per_unit as f64 * t).round();
        if n < 2.0 {
            return Err(invalid(format!(
                "n_per_unit * T = {} rounds to fewer than 2 intervals",
                n_per_unit as f64 * t
            )));
        }
        if n > 1e7 {
            return Err(invalid("in-plane resolution too large"));
        }
        let n = n as usize;
        let step = t / n as f64;
        let mut cell = Mat::zeros(dim_d, dim_d);
        for i in 0..dim_d {
            cell[(i, i)] = step;
        }
        Ok(SlabGrid {
            dim_d,
            intervals: vec![n; dim_d],
            n_y,
            h,
            cell,
            boundary: LateralBoundary::Clamped,
            size: t,
            n_per_unit,
        })
    }

    /// Periodic cell spanned by the columns of `periods` (`d x d`), each
    /// direction divided into `round(n_per_unit * |period|)` intervals.
    pub fn periodic(periods: &Mat, h: f64, n_per_unit: usize, n_y: usize) -> Result<Self> {
        let dim_d = periods.rows();
        if periods.cols() != dim_d || !(1..=2).contains(&dim_d) {
            return Err(invalid("period matrix must be d x d with d = 1 or 2"));
        }
        check_common(h, n_per_unit, n_y)?;
        let mut cell = Mat::zeros(dim_d, dim_d);
        let mut intervals = Vec::with_capacity(dim_d);
        for j in 0..dim_d {
            let col = periods.column(j);
            let len = crate::linalg::norm(&col);
            if !(len > 0.0 && len.is_finite()) {
                return Err(invalid("period vectors must be nonzero and finite"));
            }
            let n = ((n_per_unit as f64 * len).round() as usize).max(2);
            intervals.push(n);
            for i in 0..dim_d {
                cell[(i, j)] = col[i] / n as f64;
            }
        }
        let grid = SlabGrid {
            dim_d,
            intervals,
            n_y,
            h,
            cell,
            boundary: LateralBoundary::Periodic,
            size: 0.0,
            n_per_unit,
        };
        let area = grid.plane_measure();
        if !(area > 0.0) {
            return Err(invalid("period vectors are linearly dependent"));
        }
        Ok(SlabGrid {
            size: area.powf(1.0 / dim_d as f64),
            ..grid
        })
    }

    pub fn dim_d(&self) -> usize {
        self.dim_d
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_y(&self) -> usize {
        self.n_y
    }

    pub fn n_per_unit(&self) -> usize {
        self.n_per_unit
    }

    pub fn intervals(&self) -> &[usize] {
        &self.intervals
    }

    pub fn boundary(&self) -> LateralBoundary {
        self.boundary
    }

    /// `T` for cube slabs.
    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn cell(&self) -> &Mat {
        &self.cell
    }

    pub fn dy(&self) -> f64 {
        2.0 * self.h / self.n_y as f64
    }

    /// Nodes per in-plane direction.
    pub fn plane_nodes_per_dir(&self) -> Vec<usize> {
        match self.boundary {
            LateralBoundary::Clamped => self.intervals.iter().map(|n| n + 1).collect(),
            LateralBoundary::Periodic => self.intervals.clone(),
        }
    }

    pub fn n_plane_nodes(&self) -> usize {
        self.plane_nodes_per_dir().iter().product()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_plane_nodes() * (self.n_y + 1)
    }

    pub fn n_elements(&self) -> usize {
        self.intervals.iter().product::<usize>() * self.n_y
    }

    /// Lebesgue measure of the in-plane domain.
    pub fn plane_measure(&self) -> f64 {
        let det = match self.dim_d {
            1 => self.cell[(0, 0)],
            _ => self.cell[(0, 0)] * self.cell[(1, 1)] - self.cell[(0, 1)] * self.cell[(1, 0)],
        };
        det.abs() * self.intervals.iter().product::<usize>() as f64
    }

    /// Transverse coordinate of layer `j`.
    pub fn layer_y(&self, j: usize) -> f64 {
        -self.h + j as f64 * self.dy()
    }

    pub fn layers(&self) -> Vec<f64> {
        (0..=self.n_y).map(|j| self.layer_y(j)).collect()
    }

    /// `(in-plane multi-index, layer)` of a node.
    pub fn node_indices(&self, node: usize) -> ([usize; 2], usize) {
        let np = self.plane_nodes_per_dir();
        let plane = node % self.n_plane_nodes();
        let j = node / self.n_plane_nodes();
        let i0 = plane % np[0];
        let i1 = if self.dim_d == 2 { plane / np[0] } else { 0 };
        ([i0, i1], j)
    }

    pub fn node_index(&self, plane: [usize; 2], layer: usize) -> usize {
        let np = self.plane_nodes_per_dir();
        let p = if self.dim_d == 2 { plane[0] + np[0] * plane[1] } else { plane[0] };
        p + self.n_plane_nodes() * layer
    }

    /// In-plane position of lattice index `k` (may exceed the node range).
    pub fn plane_point(&self, k: [f64; 2]) -> [f64; 2] {
        let mut x = [0.0; 2];
        for (i, xi) in x.iter_mut().enumerate().take(self.dim_d) {
            *xi = (0..self.dim_d).map(|j| self.cell[(i, j)] * k[j]).sum();
        }
        x
    }

    /// Coordinates `(x_1, ..., x_d, y)` of a node.
    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let (p, j) = self.node_indices(node);
        let x = self.plane_point([p[0] as f64, p[1] as f64]);
        let mut out = x[..self.dim_d].to_vec();
        out.push(self.layer_y(j));
        out
    }

    /// True for nodes whose displacement is fixed to zero.
    pub fn is_fixed(&self, node: usize) -> bool {
        let (p, _) = self.node_indices(node);
        match self.boundary {
            LateralBoundary::Clamped => (0..self.dim_d).any(|k| p[k] == 0 || p[k] == self.intervals[k]),
            LateralBoundary::Periodic => node == 0,
        }
    }

    /// Nodes per element (4 for d = 1, 8 for d = 2).
    pub fn nodes_per_element(&self) -> usize {
        1 << (self.dim_d + 1)
    }

    /// `(in-plane element index, layer)` of an element.
    pub fn element_indices(&self, e: usize) -> ([usize; 2], usize) {
        let n0 = self.intervals[0];
        let n_plane: usize = self.intervals.iter().product();
        let plane = e % n_plane;
        let j = e / n_plane;
        let e0 = plane % n0;
        let e1 = if self.dim_d == 2 { plane / n0 } else { 0 };
        ([e0, e1], j)
    }

    /// Global node of each local corner. Local corner `a` has bit `k` set
    /// for the upper side in in-plane direction `k`, and bit `d` for the
    /// upper layer.
    pub fn element_nodes(&self, e: usize, out: &mut [usize]) {
        let (p, j) = self.element_indices(e);
        let np = self.plane_nodes_per_dir();
        for (a, slot) in out.iter_mut().enumerate().take(self.nodes_per_element()) {
            let mut idx = [0usize; 2];
            for k in 0..self.dim_d {
                idx[k] = (p[k] + ((a >> k) & 1)) % np[k];
            }
            let layer = j + ((a >> self.dim_d) & 1);
            *slot = self.node_index(idx, layer);
        }
    }

    /// Same node layout, different physical extent in-plane.
    pub fn same_topology(&self, other: &SlabGrid) -> bool {
        self.dim_d == other.dim_d
            && self.intervals == other.intervals
            && self.n_y == other.n_y
            && self.boundary == other.boundary
    }
}

fn check_common(h: f64, n_per_unit: usize, n_y: usize) -> Result<()> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("h must be > 0, got {h}")));
    }
    if n_per_unit == 0 {
        return Err(invalid("n_per_unit must be >= 1"));
    }
    if n_y == 0 {
        return Err(invalid("n_y must be >= 1"));
    }
    Ok(())
}
