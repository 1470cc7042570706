//! Monotonicity certification plumbing: the per-step checks attached to a
//! run (advisory or strict) and the standalone `certify` verb's report,
//! including the dense-inverse cross-check.

use crate::config::CertMode;
use gradflow::monotonicity::{
    check_lorenz_sharp, check_mesh_constraint, check_mmatrix_rowsum, lorenz_split,
    scheme_operator, verify_monotone_dense, CertificateReport,
};
use gradflow::{
    compute_mobility, CoefficientField, ElementOrder, EndCriterion, EquationKind, Grid,
    Simulation, StepDiagnostics, StepError,
};
use serde::Serialize;

/// Above this total dimension the standalone verb runs its dense-inverse
/// cross-check on a reduced copy of the problem instead of the configured
/// grid (the structural checks still run at full scale).
pub const FULL_SCALE_DENSE_CAP: usize = 1024;

/// Cells per axis of the reduced dense-oracle grid (9 nodes per axis at
/// either order), indexed by `degree - 1`.
pub const SUB_SCALE_CELLS: [usize; 2] = [8, 4];

/// Certificates for the matrix of one step.
#[derive(Debug, Serialize)]
pub struct CertSet {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    pub any_pass: bool,
    pub certificates: Vec<CertificateReport>,
}

/// The `certificates.json` payload.
#[derive(Debug, Serialize)]
pub struct CertEnvelope {
    pub mode: String,
    pub steps_certified: usize,
    pub reports: Vec<CertSet>,
}

/// Structural certificates for one assembled step matrix: row-sum
/// M-matrix test at order 1, mesh constraint plus sharp Lorenz test at
/// order 2.
pub fn certify_matrix(
    grid: &Grid,
    coeff: &CoefficientField,
    dt: f64,
) -> Result<Vec<CertificateReport>, gradflow::Error> {
    let a = scheme_operator(grid, coeff, dt)?;
    match grid.order() {
        ElementOrder::Q1 => Ok(vec![check_mmatrix_rowsum(&a)]),
        ElementOrder::Q2 => {
            let split = lorenz_split(&a, grid, coeff, dt)?;
            Ok(vec![check_mesh_constraint(grid, coeff, dt)?, check_lorenz_sharp(&split)])
        }
    }
}

/// Per-step certification hooked into a run's observer. In strict mode a
/// step whose matrix earns no passing certificate aborts the run; in
/// advisory mode everything is recorded and nothing blocks.
pub struct StepCertifier {
    mode: CertMode,
    end: EndCriterion,
    /// Nodal mobility exponents when they do not change between steps
    /// (`-V`); otherwise the current chemoattractant is used.
    fixed_exponent: Option<Vec<f64>>,
    pub sets: Vec<CertSet>,
}

impl StepCertifier {
    pub fn new(mode: CertMode, equation: &EquationKind, end: EndCriterion) -> Self {
        let fixed_exponent = match equation {
            EquationKind::FokkerPlanck { potential } => {
                Some(potential.iter().map(|v| -v).collect())
            }
            EquationKind::KellerSegel { .. } => None,
        };
        StepCertifier { mode, end, fixed_exponent, sets: Vec::new() }
    }

    /// Mirrors the run loop's stop rules: certification applies only to
    /// states the solver will actually step from.
    fn will_step(&self, sim: &Simulation, diag: &StepDiagnostics) -> bool {
        let t_cap = match self.end {
            EndCriterion::FinalTime(t) => t,
            EndCriterion::Steady { max_time, .. } => max_time,
        };
        if t_cap - sim.state().t <= 1e-12 * t_cap.max(1.0) {
            return false;
        }
        if let EndCriterion::Steady { tol, .. } = self.end {
            if diag.step > 0 && diag.linf_drho <= tol {
                return false;
            }
        }
        true
    }

    pub fn observe(
        &mut self,
        sim: &Simulation,
        diag: &StepDiagnostics,
    ) -> Result<(), StepError> {
        if self.mode == CertMode::Off || !self.will_step(sim, diag) {
            return Ok(());
        }
        let t_cap = match self.end {
            EndCriterion::FinalTime(t) => t,
            EndCriterion::Steady { max_time, .. } => max_time,
        };
        let remaining = t_cap - sim.state().t;
        let dt =
            if remaining <= sim.dt() * (1.0 + 1e-9) { remaining } else { sim.dt() };
        let coeff = match &self.fixed_exponent {
            Some(e) => compute_mobility(sim.grid(), e)?,
            None => {
                let c = sim.state().c.as_deref().ok_or_else(|| {
                    StepError::Aborted("chemoattractant missing at certification".into())
                })?;
                compute_mobility(sim.grid(), c)?
            }
        };
        let certificates = certify_matrix(sim.grid(), &coeff, dt)?;
        let any_pass = certificates.iter().any(|c| c.pass);
        self.sets.push(CertSet {
            step: diag.step,
            t: diag.t,
            dt,
            any_pass,
            certificates,
        });
        if self.mode == CertMode::Strict && !any_pass {
            return Err(StepError::Aborted(format!(
                "no monotonicity certificate passed for the step from t = {:.6} \
                 (strict certification)",
                diag.t
            )));
        }
        Ok(())
    }

    pub fn into_envelope(self) -> CertEnvelope {
        CertEnvelope {
            mode: self.mode.to_string(),
            steps_certified: self.sets.len(),
            reports: self.sets,
        }
    }
}

/// First-step mobility of a problem: `exp(-V)`, or `exp(c0)` with `c0`
/// solved from the initial density.
pub fn initial_mobility(
    grid: &Grid,
    equation: &EquationKind,
    rho0: &[f64],
) -> Result<CoefficientField, StepError> {
    match equation {
        EquationKind::FokkerPlanck { potential } => {
            let e: Vec<f64> = potential.iter().map(|v| -v).collect();
            compute_mobility(grid, &e)
        }
        EquationKind::KellerSegel { alpha, .. } => {
            let c = gradflow::helmholtz_solve(grid, *alpha, rho0).map_err(StepError::Invalid)?;
            compute_mobility(grid, &c)
        }
    }
}

/// Dense-inverse oracle for a problem's first-step matrix.
pub fn dense_oracle(
    grid: &Grid,
    equation: &EquationKind,
    rho0: &[f64],
    dt: f64,
) -> Result<CertificateReport, StepError> {
    let coeff = initial_mobility(grid, equation, rho0)?;
    let a = scheme_operator(grid, &coeff, dt).map_err(StepError::Invalid)?;
    verify_monotone_dense(&a).map_err(StepError::Invalid)
}
