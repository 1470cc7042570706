//! Assembly of the variable-coefficient stiffness matrix, the semi-implicit
//! step matrix, and the constant-coefficient Helmholtz operator.
//!
//! The stiffness `S` discretizes `<M grad u, grad v>` with lumped
//! Gauss-Lobatto quadrature, assembled cell by cell; mirror reflection of
//! the ghost layer at no-flux boundaries is implicit in that assembly. `S`
//! is kept unscaled so the implicit step solves `(W M + dt S) g = W M g_old`
//! with a symmetric matrix; `W^{-1} S` variants are produced on demand by
//! row scaling.

use crate::error::Error;
use crate::grid::{lumped_weights, ElementOrder, Grid};
use crate::sparse::SparseOperator;

/// Strictly positive nodal coefficient field (a mobility), aligned with a
/// grid's flat node ordering.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    values: Vec<f64>,
}

impl CoefficientField {
    /// Validates length and strict positivity; the error names the first
    /// offending node.
    pub fn new(grid: &Grid, values: Vec<f64>) -> Result<Self, Error> {
        grid.check_len(&values)?;
        for (i, &v) in values.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::NonpositiveCoefficient { index: i, value: v });
            }
        }
        Ok(CoefficientField { values })
    }

    /// Samples `f` at the grid nodes.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self, Error> {
        CoefficientField::new(grid, grid.sample(f))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn value(&self, i: usize) -> f64 {
        self.values[i]
    }

    /// Geometric mean of the field, the scale used by the solver's
    /// constant-coefficient preconditioner.
    pub fn geometric_mean(&self) -> f64 {
        let log_sum: f64 = self.values.iter().map(|v| v.ln()).sum();
        (log_sum / self.values.len() as f64).exp()
    }
}

/// Per-cell stiffness of one Q1 cell `[x_i, x_i + h]`:
/// `(m_l + m_r)/(2h) * [[1, -1], [-1, 1]]`.
#[inline]
fn q1_cell(m: [f64; 2], h: f64) -> [[f64; 2]; 2] {
    let s = (m[0] + m[1]) / (2.0 * h);
    [[s, -s], [-s, s]]
}

/// Per-cell stiffness of one Q2 cell of width `2h` under 3-point
/// Gauss-Lobatto quadrature. All numerators are integer combinations of the
/// nodal coefficients, over a common `12h`.
#[inline]
fn q2_cell(m: [f64; 3], h: f64) -> [[f64; 3]; 3] {
    let d = 12.0 * h;
    let s11 = (9.0 * m[0] + 4.0 * m[1] + m[2]) / d;
    let s12 = -(12.0 * m[0] + 4.0 * m[2]) / d;
    let s13 = (3.0 * m[0] - 4.0 * m[1] + 3.0 * m[2]) / d;
    let s22 = 16.0 * (m[0] + m[2]) / d;
    let s23 = -(4.0 * m[0] + 12.0 * m[2]) / d;
    let s33 = (m[0] + 4.0 * m[1] + 9.0 * m[2]) / d;
    [[s11, s12, s13], [s12, s22, s23], [s13, s23, s33]]
}

/// Assembles the stiffness triplets of one axis line into `out`. `index`
/// maps a position along the line to a flat node index, `coeff_at` reads the
/// coefficient there, and every cell matrix is scaled by `perp_weight` (the
/// lumped weight of the perpendicular node; 1 in 1D).
fn line_stiffness(
    order: ElementOrder,
    cells: usize,
    h: f64,
    perp_weight: f64,
    index: &dyn Fn(usize) -> usize,
    coeff: &[f64],
    out: &mut Vec<(usize, usize, f64)>,
) {
    let deg = order.degree();
    for cell in 0..cells {
        let base = cell * deg;
        match order {
            ElementOrder::Q1 => {
                let e = q1_cell([coeff[index(base)], coeff[index(base + 1)]], h);
                for a in 0..2 {
                    for b in 0..2 {
                        out.push((index(base + a), index(base + b), perp_weight * e[a][b]));
                    }
                }
            }
            ElementOrder::Q2 => {
                let e = q2_cell(
                    [coeff[index(base)], coeff[index(base + 1)], coeff[index(base + 2)]],
                    h,
                );
                for a in 0..3 {
                    for b in 0..3 {
                        out.push((index(base + a), index(base + b), perp_weight * e[a][b]));
                    }
                }
            }
        }
    }
}

/// Stiffness matrix for `<M grad u, grad v>` under lumped quadrature.
/// Symmetric, rows sum to zero (no-flux), and positive semidefinite for
/// positive `M`.
pub fn assemble_stiffness(grid: &Grid, coeff: &CoefficientField) -> Result<SparseOperator, Error> {
    grid.check_len(coeff.values())?;
    let n = grid.nodes_per_axis();
    let cells = grid.cells_per_axis();
    let m = coeff.values();
    let mut triplets = Vec::new();
    match grid.dimension() {
        1 => {
            line_stiffness(grid.order(), cells, grid.h(0), 1.0, &|i| i, m, &mut triplets);
        }
        2 => {
            let w = lumped_weights(grid);
            // x-direction terms, one line per y node
            for iy in 0..n {
                let wy = w.axis_weights(1)[iy];
                line_stiffness(grid.order(), cells, grid.h(0), wy, &|i| grid.flat(i, iy), m, &mut triplets);
            }
            // y-direction terms, one line per x node
            for ix in 0..n {
                let wx = w.axis_weights(0)[ix];
                line_stiffness(grid.order(), cells, grid.h(1), wx, &|j| grid.flat(ix, j), m, &mut triplets);
            }
        }
        _ => unreachable!(),
    }
    let mut s = SparseOperator::from_triplets(grid.n_nodes(), triplets);
    s.symmetric = true;
    s.null_vector_one = true;
    Ok(s)
}

/// Step matrix `W M + dt S(M)` of the semi-implicit scheme; symmetric
/// positive definite for positive `M` and `dt > 0`.
pub fn assemble_step_matrix(
    grid: &Grid,
    coeff: &CoefficientField,
    dt: f64,
) -> Result<SparseOperator, Error> {
    if !(dt > 0.0) {
        return Err(Error::NonpositiveDt(dt));
    }
    let s = assemble_stiffness(grid, coeff)?;
    let w = lumped_weights(grid);
    let mut triplets: Vec<(usize, usize, f64)> =
        s.entries().map(|(i, j, v)| (i, j, dt * v)).collect();
    for i in 0..grid.n_nodes() {
        triplets.push((i, i, w.value(i) * coeff.value(i)));
    }
    let mut a = SparseOperator::from_triplets(grid.n_nodes(), triplets);
    a.symmetric = true;
    Ok(a)
}

/// The dimensionless constant-coefficient axis operator `h^2 W^{-1} S_1`:
/// the matrix `K` (order 1) or `H` (order 2). Entries are exact dyadic
/// rationals.
///
/// `K` rows: `[2, -2]` at the boundary, `[-1, 2, -1]` inside. `H` rows:
/// `[7/2, -4, 1/2]` at the boundary, `[-1, 2, -1]` at cell centers,
/// `[1/4, -2, 7/2, -2, 1/4]` at interior cell ends.
pub fn axis_laplacian(order: ElementOrder, n: usize) -> Result<SparseOperator, Error> {
    let mut t: Vec<(usize, usize, f64)> = Vec::new();
    match order {
        ElementOrder::Q1 => {
            if n < 2 {
                return Err(Error::InvalidGrid("order-1 axis needs at least 2 nodes".into()));
            }
            for i in 0..n {
                if i == 0 {
                    t.push((0, 0, 2.0));
                    t.push((0, 1, -2.0));
                } else if i == n - 1 {
                    t.push((i, i - 1, -2.0));
                    t.push((i, i, 2.0));
                } else {
                    t.push((i, i - 1, -1.0));
                    t.push((i, i, 2.0));
                    t.push((i, i + 1, -1.0));
                }
            }
        }
        ElementOrder::Q2 => {
            if n < 3 || n % 2 == 0 {
                return Err(Error::InvalidGrid(
                    "order-2 axis needs an odd node count of at least 3".into(),
                ));
            }
            for i in 0..n {
                if i % 2 == 1 {
                    t.push((i, i - 1, -1.0));
                    t.push((i, i, 2.0));
                    t.push((i, i + 1, -1.0));
                } else if i == 0 {
                    t.push((0, 0, 28.0 / 8.0));
                    t.push((0, 1, -32.0 / 8.0));
                    t.push((0, 2, 4.0 / 8.0));
                } else if i == n - 1 {
                    t.push((i, i - 2, 4.0 / 8.0));
                    t.push((i, i - 1, -32.0 / 8.0));
                    t.push((i, i, 28.0 / 8.0));
                } else {
                    t.push((i, i - 2, 2.0 / 8.0));
                    t.push((i, i - 1, -16.0 / 8.0));
                    t.push((i, i, 28.0 / 8.0));
                    t.push((i, i + 1, -16.0 / 8.0));
                    t.push((i, i + 2, 2.0 / 8.0));
                }
            }
        }
    }
    Ok(SparseOperator::from_triplets(n, t))
}

/// Helmholtz operator `(1/h^2) K_sum + alpha I` acting on nodal values,
/// where `K_sum` applies the axis operator along each axis (the Kronecker
/// sum in 2D).
pub fn assemble_helmholtz(grid: &Grid, alpha: f64) -> Result<SparseOperator, Error> {
    if !(alpha > 0.0) {
        return Err(Error::NonpositiveAlpha(alpha));
    }
    let n = grid.nodes_per_axis();
    let axis = axis_laplacian(grid.order(), n)?;
    let mut t: Vec<(usize, usize, f64)> = Vec::new();
    match grid.dimension() {
        1 => {
            let inv_h2 = 1.0 / (grid.h(0) * grid.h(0));
            for (i, j, v) in axis.entries() {
                t.push((i, j, v * inv_h2));
            }
            for i in 0..n {
                t.push((i, i, alpha));
            }
        }
        2 => {
            let inv_hx2 = 1.0 / (grid.h(0) * grid.h(0));
            let inv_hy2 = 1.0 / (grid.h(1) * grid.h(1));
            for iy in 0..n {
                for (i, j, v) in axis.entries() {
                    t.push((grid.flat(i, iy), grid.flat(j, iy), v * inv_hx2));
                }
            }
            for ix in 0..n {
                for (i, j, v) in axis.entries() {
                    t.push((grid.flat(ix, i), grid.flat(ix, j), v * inv_hy2));
                }
            }
            for i in 0..grid.n_nodes() {
                t.push((i, i, alpha));
            }
        }
        _ => unreachable!(),
    }
    Ok(SparseOperator::from_triplets(grid.n_nodes(), t))
}
