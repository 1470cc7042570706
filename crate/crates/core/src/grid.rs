//! Uniform tensor grids of Gauss-Lobatto type and their lumped quadrature
//! weights.
//!
//! A 1D axis with `k` cells of width `2h` (order 2) or `h` (order 1) carries
//! `N = order*k + 1` equispaced nodes. For order 2 the odd-numbered nodes
//! (1-based) are cell ends and the even-numbered ones are cell centers; the
//! composite lumped weights are trapezoid (order 1) or Simpson (order 2).
//! 2D grids are tensor products with a shared cell count per axis.

use crate::error::Error;

/// Polynomial degree of the underlying element space. Q1 yields the classical
/// second-order scheme, Q2 the fourth-order one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ElementOrder {
    Q1,
    Q2,
}

impl ElementOrder {
    /// Nodes added per cell along one axis (1 or 2).
    pub fn degree(self) -> usize {
        match self {
            ElementOrder::Q1 => 1,
            ElementOrder::Q2 => 2,
        }
    }

    /// Maps the numeric order used in configuration files; anything outside
    /// {1, 2} is rejected.
    pub fn from_degree(order: usize) -> Result<Self, Error> {
        match order {
            1 => Ok(ElementOrder::Q1),
            2 => Ok(ElementOrder::Q2),
            other => Err(Error::InvalidGrid(format!(
                "element order {other} is not supported (expected 1 or 2)"
            ))),
        }
    }
}

/// Role of a node along one axis of an order-2 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisRole {
    /// Cell endpoint; `boundary` marks the two domain endpoints.
    CellEnd { boundary: bool },
    /// Cell midpoint.
    CellCenter,
}

/// Role of a 2D node on an order-2 grid, classified by its per-axis roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRole2d {
    /// Cell corner (end in both axes).
    Knot,
    /// Midpoint of an edge parallel to the x axis (center in x, end in y).
    EdgeCenterX,
    /// Midpoint of an edge parallel to the y axis (end in x, center in y).
    EdgeCenterY,
    /// Cell midpoint (center in both axes).
    CellCenter,
}

/// Uniform tensor grid over a 1D interval or a 2D rectangle.
#[derive(Debug, Clone)]
pub struct Grid {
    order: ElementOrder,
    intervals: Vec<(f64, f64)>,
    cells: usize,
}

impl Grid {
    /// Builds a grid over `domain` (one closed interval per axis) with
    /// `cells` elements along every axis.
    pub fn new(order: ElementOrder, domain: &[(f64, f64)], cells: usize) -> Result<Self, Error> {
        if domain.is_empty() || domain.len() > 2 {
            return Err(Error::InvalidGrid(format!(
                "dimension {} is not supported (expected 1 or 2)",
                domain.len()
            )));
        }
        if cells == 0 {
            return Err(Error::InvalidGrid("cell count must be positive".into()));
        }
        for &(a, b) in domain {
            if !(b > a) || !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidGrid(format!(
                    "interval [{a}, {b}] is empty or not finite"
                )));
            }
        }
        Ok(Grid { order, intervals: domain.to_vec(), cells })
    }

    /// 1D grid over `[a, b]`.
    pub fn line(order: ElementOrder, a: f64, b: f64, cells: usize) -> Result<Self, Error> {
        Grid::new(order, &[(a, b)], cells)
    }

    /// 2D grid over the square `[a, b]^2`.
    pub fn square(order: ElementOrder, a: f64, b: f64, cells: usize) -> Result<Self, Error> {
        Grid::new(order, &[(a, b), (a, b)], cells)
    }

    pub fn order(&self) -> ElementOrder {
        self.order
    }

    pub fn dimension(&self) -> usize {
        self.intervals.len()
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    pub fn interval(&self, axis: usize) -> (f64, f64) {
        self.intervals[axis]
    }

    /// Nodes per axis, `order * cells + 1`.
    pub fn nodes_per_axis(&self) -> usize {
        self.order.degree() * self.cells + 1
    }

    /// Total node count, `nodes_per_axis() ^ dimension`.
    pub fn n_nodes(&self) -> usize {
        self.nodes_per_axis().pow(self.dimension() as u32)
    }

    /// Node spacing along `axis`.
    pub fn h(&self, axis: usize) -> f64 {
        let (a, b) = self.intervals[axis];
        (b - a) / (self.nodes_per_axis() - 1) as f64
    }

    /// Spacing shared by all axes; an error if the axes disagree.
    pub fn uniform_h(&self) -> Result<f64, Error> {
        let h = self.h(0);
        for axis in 1..self.dimension() {
            if (self.h(axis) - h).abs() > 1e-12 * h.abs() {
                return Err(Error::InvalidGrid(
                    "axes have different spacings; this operation needs a square grid".into(),
                ));
            }
        }
        Ok(h)
    }

    /// Coordinate of node `i` along `axis`.
    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        let (a, _) = self.intervals[axis];
        a + self.h(axis) * i as f64
    }

    /// All node coordinates along `axis`.
    pub fn axis_coords(&self, axis: usize) -> Vec<f64> {
        (0..self.nodes_per_axis()).map(|i| self.axis_coord(axis, i)).collect()
    }

    /// Flat index of the 2D node `(ix, iy)`; x varies fastest.
    #[inline]
    pub fn flat(&self, ix: usize, iy: usize) -> usize {
        debug_assert!(self.dimension() == 2);
        ix + iy * self.nodes_per_axis()
    }

    /// Inverse of [`Grid::flat`].
    #[inline]
    pub fn unflat(&self, idx: usize) -> (usize, usize) {
        let n = self.nodes_per_axis();
        (idx % n, idx / n)
    }

    /// Axis role of node `i` on an order-2 grid (even 0-based indices are
    /// cell ends). Not defined for order 1, where every node is a vertex.
    pub fn axis_role(&self, i: usize) -> Option<AxisRole> {
        match self.order {
            ElementOrder::Q1 => None,
            ElementOrder::Q2 => Some(if i % 2 == 0 {
                AxisRole::CellEnd { boundary: i == 0 || i == self.nodes_per_axis() - 1 }
            } else {
                AxisRole::CellCenter
            }),
        }
    }

    /// 2D role of node `(ix, iy)` on an order-2 grid.
    pub fn node_role_2d(&self, ix: usize, iy: usize) -> Option<NodeRole2d> {
        if self.order != ElementOrder::Q2 || self.dimension() != 2 {
            return None;
        }
        Some(match (ix % 2 == 0, iy % 2 == 0) {
            (true, true) => NodeRole2d::Knot,
            (false, true) => NodeRole2d::EdgeCenterX,
            (true, false) => NodeRole2d::EdgeCenterY,
            (false, false) => NodeRole2d::CellCenter,
        })
    }

    /// Samples `f` at every node in flat order (x fastest).
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let n = self.nodes_per_axis();
        match self.dimension() {
            1 => (0..n).map(|i| f(&[self.axis_coord(0, i)])).collect(),
            2 => {
                let mut v = Vec::with_capacity(n * n);
                for iy in 0..n {
                    let y = self.axis_coord(1, iy);
                    for ix in 0..n {
                        v.push(f(&[self.axis_coord(0, ix), y]));
                    }
                }
                v
            }
            _ => unreachable!(),
        }
    }

    /// Checks that `v` has one value per node.
    pub fn check_len(&self, v: &[f64]) -> Result<(), Error> {
        if v.len() != self.n_nodes() {
            return Err(Error::LengthMismatch { expected: self.n_nodes(), got: v.len() });
        }
        Ok(())
    }
}

/// Lumped quadrature weights of a grid: composite trapezoid (order 1) or
/// composite Simpson (order 2) per axis, tensorized in 2D.
#[derive(Debug, Clone)]
pub struct QuadratureWeights {
    values: Vec<f64>,
    axis: Vec<Vec<f64>>,
}

impl QuadratureWeights {
    /// Weight of the node with flat index `i`.
    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// 1D weights along `axis`.
    pub fn axis_weights(&self, axis: usize) -> &[f64] {
        &self.axis[axis]
    }

    /// Weighted sum `sum_i w_i f_i`; with `f = rho` this is the total mass.
    pub fn dot(&self, f: &[f64]) -> f64 {
        self.values.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn axis_weights_1d(order: ElementOrder, n: usize, h: f64) -> Vec<f64> {
    match order {
        ElementOrder::Q1 => (0..n)
            .map(|i| if i == 0 || i == n - 1 { h / 2.0 } else { h })
            .collect(),
        ElementOrder::Q2 => (0..n)
            .map(|i| {
                if i % 2 == 1 {
                    4.0 * h / 3.0 // cell center
                } else if i == 0 || i == n - 1 {
                    h / 3.0 // boundary cell end
                } else {
                    2.0 * h / 3.0 // shared cell end
                }
            })
            .collect(),
    }
}

/// Lumped weights of `grid`. Positive, and they sum to the domain measure.
pub fn lumped_weights(grid: &Grid) -> QuadratureWeights {
    let n = grid.nodes_per_axis();
    let axis: Vec<Vec<f64>> = (0..grid.dimension())
        .map(|a| axis_weights_1d(grid.order(), n, grid.h(a)))
        .collect();
    let values = match grid.dimension() {
        1 => axis[0].clone(),
        2 => {
            let mut v = Vec::with_capacity(n * n);
            for wy in &axis[1] {
                for wx in &axis[0] {
                    v.push(wx * wy);
                }
            }
            v
        }
        _ => unreachable!(),
    };
    QuadratureWeights { values, axis }
}
