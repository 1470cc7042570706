//! Linear solvers: exact eigendecomposition solves for constant-coefficient
//! operators (Helmholtz, preconditioner) and preconditioned conjugate
//! gradients for the variable-coefficient step system.
//!
//! The axis operator `K` (or `H`) is not symmetric, but `W^{1/2} K W^{-1/2}`
//! is, so its eigenvectors are obtained from a symmetric eigensolve and the
//! similarity undone afterwards. In 2D the operator is the Kronecker sum of
//! the two axis operators, so a solve is two small dense transforms per
//! axis plus a pointwise division in eigenspace.

use nalgebra::{DMatrix, DVector};

use crate::assembly::axis_laplacian;
use crate::error::Error;
use crate::grid::{lumped_weights, ElementOrder, Grid};
use crate::sparse::SparseOperator;

/// Eigendecomposition `K = V diag(lambda) V^{-1}` of one dimensionless axis
/// operator, with eigenvalues ascending and nonnegative.
#[derive(Debug, Clone)]
pub struct EigenFactorization {
    order: ElementOrder,
    n: usize,
    lambda: Vec<f64>,
    v: DMatrix<f64>,
    v_inv: DMatrix<f64>,
    v_t: DMatrix<f64>,
    v_inv_t: DMatrix<f64>,
}

impl EigenFactorization {
    /// Factorizes the `n`-node axis operator of the given order. Fails if
    /// the spectrum is not real-nonnegative to roundoff, which would signal
    /// a broken operator.
    pub fn new(order: ElementOrder, n: usize) -> Result<Self, Error> {
        let k = axis_laplacian(order, n)?.to_dense();
        // dimensionless axis weights (lumped weights divided by h)
        let u: Vec<f64> = match order {
            ElementOrder::Q1 => (0..n)
                .map(|i| if i == 0 || i == n - 1 { 0.5 } else { 1.0 })
                .collect(),
            ElementOrder::Q2 => (0..n)
                .map(|i| {
                    if i % 2 == 1 {
                        4.0 / 3.0
                    } else if i == 0 || i == n - 1 {
                        1.0 / 3.0
                    } else {
                        2.0 / 3.0
                    }
                })
                .collect(),
        };
        let sqrt_u: Vec<f64> = u.iter().map(|v| v.sqrt()).collect();
        let mut b = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                b[(i, j)] = sqrt_u[i] * k[(i, j)] / sqrt_u[j];
            }
        }
        // enforce exact symmetry before the symmetric eigensolve
        let b = (&b + b.transpose()) * 0.5;
        let eig = b.symmetric_eigen();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
        let mut lambda = Vec::with_capacity(n);
        let mut v = DMatrix::zeros(n, n);
        let mut v_inv = DMatrix::zeros(n, n);
        for (col, &src) in idx.iter().enumerate() {
            let lam = eig.eigenvalues[src];
            if lam < -1e-12 {
                return Err(Error::Unsupported(format!(
                    "axis operator has negative eigenvalue {lam}"
                )));
            }
            lambda.push(lam.max(0.0));
            for i in 0..n {
                v[(i, col)] = eig.eigenvectors[(i, src)] / sqrt_u[i];
                v_inv[(col, i)] = eig.eigenvectors[(i, src)] * sqrt_u[i];
            }
        }
        let fact = EigenFactorization {
            order,
            n,
            lambda,
            v_t: v.transpose(),
            v_inv_t: v_inv.transpose(),
            v,
            v_inv,
        };
        let defect = fact.reconstruction_defect(&k);
        if defect > 1e-10 * k.amax() {
            return Err(Error::Unsupported(format!(
                "axis eigendecomposition reconstruction defect {defect} too large"
            )));
        }
        Ok(fact)
    }

    pub fn order(&self) -> ElementOrder {
        self.order
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Eigenvalues of the dimensionless axis operator, ascending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    /// Max-norm of `V diag(lambda) V^{-1} - K`.
    fn reconstruction_defect(&self, k: &DMatrix<f64>) -> f64 {
        let lam = DMatrix::from_diagonal(&DVector::from_column_slice(&self.lambda));
        let rebuilt = &self.v * lam * &self.v_inv;
        (rebuilt - k).amax()
    }

    /// Solves `(scale_x K (x) I + I (x) scale_y K + shift I) out = rhs` on a
    /// 2D field stored x-fastest, or the 1D analogue, by transforming to the
    /// eigenbasis, dividing by `scale*lambda + shift`, and transforming back.
    fn kron_solve(&self, rhs: &[f64], scales: &[f64], shift: f64, dim: usize) -> Vec<f64> {
        let n = self.n;
        match dim {
            1 => {
                let r = DVector::from_column_slice(rhs);
                let mut hat = &self.v_inv * r;
                for k in 0..n {
                    hat[k] /= scales[0] * self.lambda[k] + shift;
                }
                (&self.v * hat).as_slice().to_vec()
            }
            2 => {
                let r = DMatrix::from_column_slice(n, n, rhs);
                let mut hat = &self.v_inv * r * &self.v_inv_t;
                for l in 0..n {
                    for k in 0..n {
                        hat[(k, l)] /=
                            scales[0] * self.lambda[k] + scales[1] * self.lambda[l] + shift;
                    }
                }
                let out = &self.v * hat * &self.v_t;
                out.as_slice().to_vec()
            }
            _ => unreachable!(),
        }
    }
}

/// Direct solver for `-lap(c) + alpha c = rho` with no-flux boundaries,
/// discretized as `(1/h^2) K_sum + alpha I`. The factorization is computed
/// once at construction and reused across solves.
#[derive(Debug, Clone)]
pub struct HelmholtzSolver {
    fact: EigenFactorization,
    alpha: f64,
    dim: usize,
    inv_h2: Vec<f64>,
}

impl HelmholtzSolver {
    pub fn new(grid: &Grid, alpha: f64) -> Result<Self, Error> {
        if !(alpha > 0.0) {
            return Err(Error::NonpositiveAlpha(alpha));
        }
        let fact = EigenFactorization::new(grid.order(), grid.nodes_per_axis())?;
        let inv_h2 = (0..grid.dimension()).map(|a| 1.0 / (grid.h(a) * grid.h(a))).collect();
        Ok(HelmholtzSolver { fact, alpha, dim: grid.dimension(), inv_h2 })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Solves for `c` given nodal `rho`.
    pub fn solve(&self, rho: &[f64]) -> Vec<f64> {
        self.fact.kron_solve(rho, &self.inv_h2, self.alpha, self.dim)
    }
}

/// One-shot Helmholtz solve; prefer [`HelmholtzSolver`] inside loops.
pub fn helmholtz_solve(grid: &Grid, alpha: f64, rho: &[f64]) -> Result<Vec<f64>, Error> {
    grid.check_len(rho)?;
    Ok(HelmholtzSolver::new(grid, alpha)?.solve(rho))
}

/// Applies an approximate inverse in PCG.
pub trait Preconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64>;
}

/// No-op preconditioner (plain CG).
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        r.to_vec()
    }
}

/// Exact inverse of the constant-coefficient step matrix
/// `mean_coeff * (W + dt S_1)`, applied through the axis eigendecomposition.
/// Spectrally equivalent to the variable-coefficient step matrix with
/// constants depending only on the range of `M`, so PCG iteration counts are
/// resolution-independent.
#[derive(Debug, Clone)]
pub struct LaplacianPreconditioner {
    fact: EigenFactorization,
    weights: Vec<f64>,
    inv_h2: Vec<f64>,
    dt_h2: Vec<f64>,
    inv_mean: f64,
    dim: usize,
}

impl LaplacianPreconditioner {
    pub fn new(grid: &Grid, dt: f64, mean_coeff: f64) -> Result<Self, Error> {
        if !(dt > 0.0) {
            return Err(Error::NonpositiveDt(dt));
        }
        if !(mean_coeff > 0.0) {
            return Err(Error::Unsupported(format!(
                "preconditioner coefficient scale {mean_coeff} must be positive"
            )));
        }
        let fact = EigenFactorization::new(grid.order(), grid.nodes_per_axis())?;
        let inv_h2: Vec<f64> =
            (0..grid.dimension()).map(|a| 1.0 / (grid.h(a) * grid.h(a))).collect();
        Ok(LaplacianPreconditioner {
            fact,
            weights: lumped_weights(grid).values().to_vec(),
            dt_h2: inv_h2.iter().map(|v| dt * v).collect(),
            inv_h2,
            inv_mean: 1.0 / mean_coeff,
            dim: grid.dimension(),
        })
    }

    /// Reuses an existing factorization; `dt` and `mean_coeff` as in `new`.
    pub fn with_factorization(
        fact: EigenFactorization,
        grid: &Grid,
        dt: f64,
        mean_coeff: f64,
    ) -> Result<Self, Error> {
        let mut p = LaplacianPreconditioner::new(grid, dt, mean_coeff)?;
        p.fact = fact;
        Ok(p)
    }

    /// Updates the coefficient scale between steps without refactorizing.
    pub fn set_mean_coeff(&mut self, mean_coeff: f64) {
        self.inv_mean = 1.0 / mean_coeff;
    }

    /// Updates the step length (e.g. for a clipped final step) without
    /// refactorizing.
    pub fn set_dt(&mut self, dt: f64) {
        for (d, ih) in self.dt_h2.iter_mut().zip(&self.inv_h2) {
            *d = dt * ih;
        }
    }
}

impl Preconditioner for LaplacianPreconditioner {
    fn apply(&self, r: &[f64]) -> Vec<f64> {
        // (gamma (W + dt S1))^{-1} r = (1/gamma) (I + dt W^{-1} S1)^{-1} W^{-1} r
        let y: Vec<f64> = r.iter().zip(&self.weights).map(|(v, w)| v / w).collect();
        let mut z = self.fact.kron_solve(&y, &self.dt_h2, 1.0, self.dim);
        for v in &mut z {
            *v *= self.inv_mean;
        }
        z
    }
}

/// Iteration record of one PCG solve. `rz_history` holds the recurrence
/// scalar `r^T P^{-1} r` per iteration, the squared preconditioner-norm of
/// the residual.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
    #[serde(skip)]
    pub rz_history: Vec<f64>,
}

/// Non-convergence within the iteration budget; carries the best iterate so
/// the caller can decide what to do with it.
#[derive(Debug, Clone)]
pub struct SolveFailure {
    pub best: Vec<f64>,
    pub report: SolveReport,
}

impl std::fmt::Display for SolveFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "pcg did not converge in {} iterations (relative residual {:.3e})",
            self.report.iterations, self.report.rel_residual
        )
    }
}

impl std::error::Error for SolveFailure {}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for a symmetric positive definite
/// operator. Converges when `|b - A x|_2 <= tol * |b|_2`. A zero right-hand
/// side returns the zero solution. `x0` seeds the iteration (warm start).
pub fn pcg_solve(
    a: &SparseOperator,
    b: &[f64],
    precond: &impl Preconditioner,
    tol: f64,
    max_iter: usize,
    x0: Option<&[f64]>,
) -> Result<(Vec<f64>, SolveReport), SolveFailure> {
    let n = a.n();
    assert_eq!(b.len(), n);
    let b_norm = norm2(b);
    if b_norm == 0.0 {
        return Ok((
            vec![0.0; n],
            SolveReport { iterations: 0, rel_residual: 0.0, converged: true, rz_history: vec![] },
        ));
    }
    let mut x = match x0 {
        Some(v) => {
            assert_eq!(v.len(), n);
            v.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = {
        let ax = a.mul_vec(&x);
        b.iter().zip(&ax).map(|(bv, av)| bv - av).collect::<Vec<f64>>()
    };
    let mut rel = norm2(&r) / b_norm;
    let mut history = Vec::new();
    if rel <= tol {
        return Ok((
            x,
            SolveReport { iterations: 0, rel_residual: rel, converged: true, rz_history: history },
        ));
    }
    let mut z = precond.apply(&r);
    let mut rz = dot(&r, &z);
    let mut p = z.clone();
    let mut q = vec![0.0; n];
    for iter in 1..=max_iter {
        history.push(rz);
        a.mul_vec_into(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) || !(rz > 0.0) {
            // loss of positive definiteness (or stagnation at roundoff)
            let report = SolveReport {
                iterations: iter - 1,
                rel_residual: rel,
                converged: false,
                rz_history: history,
            };
            return Err(SolveFailure { best: x, report });
        }
        let alpha = rz / pq;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        rel = norm2(&r) / b_norm;
        if rel <= tol {
            return Ok((
                x,
                SolveReport {
                    iterations: iter,
                    rel_residual: rel,
                    converged: true,
                    rz_history: history,
                },
            ));
        }
        z = precond.apply(&r);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let report = SolveReport {
        iterations: max_iter,
        rel_residual: rel,
        converged: false,
        rz_history: history,
    };
    Err(SolveFailure { best: x, report })
}
