//! Time marching for the Fokker-Planck and Keller-Segel systems with the
//! semi-implicit mobility-lagged scheme, plus conservation, energy, and
//! positivity diagnostics.
//!
//! Each implicit step freezes the mobility `M^n` (from the potential, or
//! from the chemoattractant solved out of the current density), writes the
//! density as `rho = M g`, and solves the symmetric positive definite system
//! `(W M^n + dt S(M^n)) g = W rho^n (+ dt W f)` before updating
//! `rho^{n+1} = M^n g`. Mass is conserved exactly up to linear-solver
//! tolerance because the stiffness matrix annihilates constants.

use serde::Serialize;

use crate::assembly::{assemble_step_matrix, assemble_stiffness, CoefficientField};
use crate::error::Error;
use crate::grid::{lumped_weights, ElementOrder, Grid, QuadratureWeights};
use crate::linalg::{
    pcg_solve, HelmholtzSolver, LaplacianPreconditioner, SolveFailure, SolveReport,
};
use crate::sparse::SparseOperator;

/// Largest mobility exponent magnitude accepted before a step is declared
/// blown up; `exp` overflows to infinity just above 709.
pub const MOBILITY_EXPONENT_LIMIT: f64 = 700.0;

/// Default relative PCG tolerance; tight enough that mass and energy
/// diagnostics are scheme-limited rather than solver-limited.
pub const DEFAULT_PCG_TOL: f64 = 1e-12;

/// Densities may undershoot zero by at most this much (absolute, relative
/// to the density scale) before a step is rejected; covers linear-solver
/// noise without repairing genuine scheme failures.
pub const NEGATIVE_DENSITY_TOL: f64 = 1e-11;

/// Which continuity equation is being stepped.
#[derive(Debug, Clone)]
pub enum EquationKind {
    /// `d_t rho = div(grad rho + rho grad V)` with mobility `M = exp(-V)`.
    FokkerPlanck { potential: Vec<f64> },
    /// `d_t rho = div(grad rho - rho grad c)`, `-lap(c) + alpha c = rho`,
    /// mobility `M = exp(c)`, with an optional stationary source `f`.
    KellerSegel { alpha: f64, source: Option<Vec<f64>> },
}

/// Time-step selection: a fixed value, or proportional to the node spacing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DtPolicy {
    Fixed(f64),
    /// `dt = c h`; the customary choice is `c = 1`.
    CellScaled(f64),
}

impl DtPolicy {
    pub fn resolve(&self, h: f64) -> Result<f64, Error> {
        let dt = match *self {
            DtPolicy::Fixed(dt) => dt,
            DtPolicy::CellScaled(c) => c * h,
        };
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::NonpositiveDt(dt));
        }
        Ok(dt)
    }
}

/// Full problem description consumed by [`Simulation`].
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub equation: EquationKind,
    pub rho0: Vec<f64>,
    pub dt: DtPolicy,
    pub pcg_tol: f64,
}

impl ProblemSpec {
    /// Builds a spec with the default time-step policy `dt = h` and default
    /// solver tolerance. Validates shapes and signs.
    pub fn new(grid: Grid, equation: EquationKind, rho0: Vec<f64>) -> Result<Self, Error> {
        grid.check_len(&rho0)?;
        if let Some((i, &v)) = rho0.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(Error::Unsupported(format!(
                "initial density must be nonnegative; node {i} holds {v}"
            )));
        }
        match &equation {
            EquationKind::FokkerPlanck { potential } => grid.check_len(potential)?,
            EquationKind::KellerSegel { alpha, source } => {
                if !(*alpha > 0.0) {
                    return Err(Error::NonpositiveAlpha(*alpha));
                }
                if let Some(f) = source {
                    grid.check_len(f)?;
                }
            }
        }
        Ok(ProblemSpec {
            grid,
            equation,
            rho0,
            dt: DtPolicy::CellScaled(1.0),
            pcg_tol: DEFAULT_PCG_TOL,
        })
    }
}

/// Instantaneous simulation state.
#[derive(Debug, Clone)]
pub struct State {
    pub t: f64,
    pub step: usize,
    pub rho: Vec<f64>,
    /// Chemoattractant solved from the current density (Keller-Segel only).
    pub c: Option<Vec<f64>>,
}

/// One diagnostics record; these are the CSV columns.
#[derive(Debug, Clone, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub min_rho: f64,
    pub linf_drho: f64,
    pub pcg_iters: usize,
}

/// Why a step could not be completed.
#[derive(Debug, thiserror::Error)]
pub enum StepError {
    #[error("mobility exponent {value:.3e} at node {node} exceeds the overflow limit (blow-up)")]
    BlowUp { node: usize, value: f64 },
    #[error("density {value:.3e} at node {node} is negative beyond solver tolerance")]
    NegativeDensity { node: usize, value: f64 },
    #[error("explicit step unstable: density {value:.3e} at node {node}")]
    Unstable { node: usize, value: f64 },
    #[error("linear solve failed: {0}")]
    Solve(#[from] SolveFailure),
    #[error(transparent)]
    Invalid(#[from] Error),
    /// Raised by run observers to stop a run (e.g. a failed strict
    /// certification).
    #[error("{0}")]
    Aborted(String),
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum RunOutcome {
    ReachedFinalTime,
    ReachedSteady { residual: f64 },
    Aborted,
}

/// Trajectory of diagnostics plus the terminal outcome; on abort the
/// trajectory holds everything completed before the failing step.
#[derive(Debug)]
pub struct RunResult {
    pub outcome: RunOutcome,
    pub trajectory: Vec<StepDiagnostics>,
    pub error: Option<StepError>,
}

/// When to stop a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndCriterion {
    /// March to `t = T` exactly, clipping the last step.
    FinalTime(f64),
    /// Stop once `max |rho^{n+1} - rho^n| <= tol`, with a time cap.
    Steady { tol: f64, max_time: f64 },
}

/// Pointwise mobility `exp(e_i)` from nodal exponents (`-V` for
/// Fokker-Planck, `c` for Keller-Segel). Exponent magnitudes beyond
/// [`MOBILITY_EXPONENT_LIMIT`] abort as blow-up rather than producing
/// infinities or zeros.
pub fn compute_mobility(grid: &Grid, exponents: &[f64]) -> Result<CoefficientField, StepError> {
    grid.check_len(exponents).map_err(StepError::Invalid)?;
    for (i, &e) in exponents.iter().enumerate() {
        if !e.is_finite() || e.abs() > MOBILITY_EXPONENT_LIMIT {
            return Err(StepError::BlowUp { node: i, value: e });
        }
    }
    CoefficientField::new(grid, exponents.iter().map(|e| e.exp()).collect())
        .map_err(StepError::Invalid)
}

/// Discrete free energy `sum_i w_i (rho_i log(rho_i / M_i) - rho_i +
/// (1/2) c_i rho_i)`, with the convention `0 log 0 = 0`; pass `c = None`
/// for Fokker-Planck, where the interaction term is absent. The entropy is
/// undefined off the positive cone, so any negative density makes the
/// result NaN (possible only with sign-changing sources, where the
/// dissipation law does not apply anyway).
pub fn energy(
    weights: &QuadratureWeights,
    rho: &[f64],
    mobility: &CoefficientField,
    c: Option<&[f64]>,
) -> f64 {
    let w = weights.values();
    assert_eq!(rho.len(), w.len());
    let m = mobility.values();
    assert_eq!(m.len(), w.len());
    let mut total = 0.0;
    for i in 0..w.len() {
        let r = rho[i];
        if r < 0.0 {
            return f64::NAN;
        }
        let mut term = if r == 0.0 { 0.0 } else { r * (r / m[i]).ln() - r };
        if let Some(c) = c {
            term += 0.5 * c[i] * r;
        }
        total += w[i] * term;
    }
    total
}

/// Owns the state and cached solver machinery for one time-marched problem.
pub struct Simulation {
    grid: Grid,
    weights: QuadratureWeights,
    equation: EquationKind,
    dt: f64,
    pcg_tol: f64,
    max_iter: usize,
    state: State,
    helmholtz: Option<HelmholtzSolver>,
    precond: LaplacianPreconditioner,
    /// Fixed mobility for Fokker-Planck; Keller-Segel recomputes per step.
    fixed_mobility: Option<CoefficientField>,
    /// Cached step matrix for the fixed-mobility case, keyed by the dt it
    /// was assembled with (the final clipped step differs).
    cached_matrix: Option<(f64, SparseOperator)>,
    last_report: Option<SolveReport>,
}

impl Simulation {
    pub fn new(spec: ProblemSpec) -> Result<Self, StepError> {
        // revalidate: the fields are public
        let spec2 = ProblemSpec::new(spec.grid, spec.equation, spec.rho0)?;
        let ProblemSpec { grid, equation, rho0, .. } = spec2;
        let dt = spec.dt.resolve(grid.uniform_h()?)?;
        if !(spec.pcg_tol > 0.0) {
            return Err(Error::Unsupported(format!("pcg tolerance {} must be positive", spec.pcg_tol)).into());
        }
        let weights = lumped_weights(&grid);
        let helmholtz = match &equation {
            EquationKind::KellerSegel { alpha, .. } => Some(HelmholtzSolver::new(&grid, *alpha)?),
            EquationKind::FokkerPlanck { .. } => None,
        };
        let fixed_mobility = match &equation {
            EquationKind::FokkerPlanck { potential } => {
                let neg_v: Vec<f64> = potential.iter().map(|v| -v).collect();
                Some(compute_mobility(&grid, &neg_v)?)
            }
            EquationKind::KellerSegel { .. } => None,
        };
        let mean0 = match &fixed_mobility {
            Some(m) => m.geometric_mean(),
            None => 1.0, // placeholder; reset from M^n before each solve
        };
        let precond = LaplacianPreconditioner::new(&grid, dt, mean0)?;
        // failsafe only: the preconditioner keeps realistic counts far lower
        let max_iter = 10 * grid.n_nodes();
        let state = State { t: 0.0, step: 0, rho: rho0, c: None };
        Ok(Simulation {
            grid,
            weights,
            equation,
            dt,
            pcg_tol: spec.pcg_tol,
            max_iter,
            state,
            helmholtz,
            precond,
            fixed_mobility,
            cached_matrix: None,
            last_report: None,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn weights(&self) -> &QuadratureWeights {
        &self.weights
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn last_solve_report(&self) -> Option<&SolveReport> {
        self.last_report.as_ref()
    }

    /// Solves the chemoattractant for the current density if it is not
    /// already cached (no-op for Fokker-Planck).
    fn ensure_c(&mut self) -> Result<(), StepError> {
        if self.state.c.is_none() {
            if let Some(hs) = &self.helmholtz {
                self.state.c = Some(hs.solve(&self.state.rho));
            }
        }
        Ok(())
    }

    /// Mobility frozen at the current state: `exp(-V)` or `exp(c^n)`.
    pub fn mobility(&mut self) -> Result<CoefficientField, StepError> {
        if let Some(m) = &self.fixed_mobility {
            return Ok(m.clone());
        }
        self.ensure_c()?;
        let c = self.state.c.as_ref().expect("keller-segel state has c after ensure_c");
        compute_mobility(&self.grid, c)
    }

    fn diagnostics(&mut self, linf_drho: f64, pcg_iters: usize) -> Result<StepDiagnostics, StepError> {
        self.ensure_c()?;
        let mob = self.mobility()?;
        let e = energy(&self.weights, &self.state.rho, &mob, self.state.c.as_deref());
        let min_rho = self.state.rho.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(StepDiagnostics {
            step: self.state.step,
            t: self.state.t,
            mass: self.weights.dot(&self.state.rho),
            energy: e,
            min_rho,
            linf_drho,
            pcg_iters,
        })
    }

    /// Diagnostics of the state as it stands, before any step (the `step 0`
    /// CSV row).
    pub fn initial_diagnostics(&mut self) -> Result<StepDiagnostics, StepError> {
        self.diagnostics(0.0, 0)
    }

    /// One semi-implicit step of length `dt()`.
    pub fn step(&mut self) -> Result<StepDiagnostics, StepError> {
        self.step_with(self.dt)
    }

    fn step_with(&mut self, dt: f64) -> Result<StepDiagnostics, StepError> {
        self.ensure_c()?;
        let mob = self.mobility()?;
        let g: Vec<f64> =
            self.state.rho.iter().zip(mob.values()).map(|(r, m)| r / m).collect();

        let reuse = self.fixed_mobility.is_some()
            && matches!(&self.cached_matrix, Some((d, _)) if *d == dt);
        if !reuse {
            let a = assemble_step_matrix(&self.grid, &mob, dt)?;
            self.cached_matrix = Some((dt, a));
            self.precond.set_dt(dt);
        }
        let a = &self.cached_matrix.as_ref().expect("step matrix cached above").1;

        let w = self.weights.values();
        let mut rhs: Vec<f64> =
            w.iter().zip(&self.state.rho).map(|(wi, ri)| wi * ri).collect();
        if let EquationKind::KellerSegel { source: Some(f), .. } = &self.equation {
            for i in 0..rhs.len() {
                rhs[i] += dt * w[i] * f[i];
            }
        }
        if self.fixed_mobility.is_none() {
            self.precond.set_mean_coeff(mob.geometric_mean());
        }

        let (g_new, report) =
            pcg_solve(a, &rhs, &self.precond, self.pcg_tol, self.max_iter, Some(&g))?;

        let rho_new: Vec<f64> = mob.values().iter().zip(&g_new).map(|(m, g)| m * g).collect();
        // The positivity theorem needs a nonnegative right-hand side; a
        // sign-changing source voids it, and then an undershoot near a zero
        // of rho is legitimate output rather than a solver failure.
        let rhs_nonnegative = rhs.iter().all(|v| *v >= 0.0);
        if rhs_nonnegative {
            let scale = rho_new.iter().cloned().fold(1.0f64, f64::max);
            if let Some((i, &v)) = rho_new
                .iter()
                .enumerate()
                .find(|(_, v)| **v < -NEGATIVE_DENSITY_TOL * scale)
            {
                return Err(StepError::NegativeDensity { node: i, value: v });
            }
        }
        let linf_drho = self
            .state
            .rho
            .iter()
            .zip(&rho_new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);

        self.state.rho = rho_new;
        self.state.c = None;
        self.state.t += dt;
        self.state.step += 1;
        let iters = report.iterations;
        self.last_report = Some(report);
        self.diagnostics(linf_drho, iters)
    }

    /// One forward-Euler step `rho - dt W^{-1} S(M^n) g^n` on the same
    /// spatial operator; order-1 discretizations only. Subject to the
    /// parabolic restriction `dt = O(h^2)`; an emerging negative or
    /// non-finite density aborts as instability.
    pub fn step_explicit(&mut self) -> Result<StepDiagnostics, StepError> {
        if self.grid.order() != ElementOrder::Q1 {
            return Err(Error::Unsupported(
                "the explicit stepper supports the order-1 discretization only".into(),
            )
            .into());
        }
        let dt = self.dt;
        self.ensure_c()?;
        let mob = self.mobility()?;
        let g: Vec<f64> =
            self.state.rho.iter().zip(mob.values()).map(|(r, m)| r / m).collect();
        let s = assemble_stiffness(&self.grid, &mob)?;
        let sg = s.mul_vec(&g);
        let w = self.weights.values();
        let mut rho_new: Vec<f64> = (0..g.len())
            .map(|i| self.state.rho[i] - dt * sg[i] / w[i])
            .collect();
        if let EquationKind::KellerSegel { source: Some(f), .. } = &self.equation {
            for i in 0..rho_new.len() {
                rho_new[i] += dt * f[i];
            }
        }
        if let Some((i, &v)) = rho_new.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
            return Err(StepError::Unstable { node: i, value: v });
        }
        let linf_drho = self
            .state
            .rho
            .iter()
            .zip(&rho_new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        self.state.rho = rho_new;
        self.state.c = None;
        self.state.t += dt;
        self.state.step += 1;
        self.diagnostics(linf_drho, 0)
    }

    /// Marches until the end criterion with the implicit stepper.
    pub fn run(&mut self, end: EndCriterion) -> RunResult {
        self.run_observed(end, |_, _| Ok(()))
    }

    /// [`Simulation::run`] with a per-step observer (CSV streaming, strict
    /// certification); an observer error aborts the run.
    pub fn run_observed(
        &mut self,
        end: EndCriterion,
        observer: impl FnMut(&Simulation, &StepDiagnostics) -> Result<(), StepError>,
    ) -> RunResult {
        self.drive(end, false, observer)
    }

    /// Marches with the explicit stepper instead (order-1 only).
    pub fn run_explicit(&mut self, end: EndCriterion) -> RunResult {
        self.drive(end, true, |_, _| Ok(()))
    }

    fn drive(
        &mut self,
        end: EndCriterion,
        explicit: bool,
        mut observer: impl FnMut(&Simulation, &StepDiagnostics) -> Result<(), StepError>,
    ) -> RunResult {
        let mut trajectory = Vec::new();
        let abort = |trajectory: Vec<StepDiagnostics>, e: StepError| RunResult {
            outcome: RunOutcome::Aborted,
            trajectory,
            error: Some(e),
        };
        match self.initial_diagnostics() {
            Ok(d) => {
                if let Err(e) = observer(self, &d) {
                    trajectory.push(d);
                    return abort(trajectory, e);
                }
                trajectory.push(d);
            }
            Err(e) => return abort(trajectory, e),
        }
        let t_cap = match end {
            EndCriterion::FinalTime(t) => t,
            EndCriterion::Steady { max_time, .. } => max_time,
        };
        loop {
            let remaining = t_cap - self.state.t;
            if remaining <= 1e-12 * t_cap.max(1.0) {
                return RunResult {
                    outcome: RunOutcome::ReachedFinalTime,
                    trajectory,
                    error: None,
                };
            }
            let dt = if remaining <= self.dt * (1.0 + 1e-9) { remaining } else { self.dt };
            let stepped = if explicit {
                debug_assert_eq!(dt, self.dt); // explicit runs are not clipped mid-study
                self.step_explicit()
            } else {
                self.step_with(dt)
            };
            match stepped {
                Ok(d) => {
                    if let Err(e) = observer(self, &d) {
                        trajectory.push(d);
                        return abort(trajectory, e);
                    }
                    let residual = d.linf_drho;
                    trajectory.push(d);
                    if let EndCriterion::Steady { tol, .. } = end {
                        if residual <= tol {
                            return RunResult {
                                outcome: RunOutcome::ReachedSteady { residual },
                                trajectory,
                                error: None,
                            };
                        }
                    }
                }
                Err(e) => return abort(trajectory, e),
            }
        }
    }
}
