//! End-to-end stepping properties: agreement with a dense direct solve,
//! conservation and dissipation across equations and orders, first-order
//! accuracy in time against an exact evolving solution, and failure-path
//! behavior.

use gradflow::{
    assemble_step_matrix, lumped_weights, DtPolicy, ElementOrder, EndCriterion, EquationKind,
    Grid, ProblemSpec, RunOutcome, Simulation, StepError,
};
use nalgebra::DVector;

#[test]
fn one_step_matches_dense_direct_solve() {
    // 9-node 1D grid: solve the same linear system densely and compare
    let grid = Grid::line(ElementOrder::Q2, -1.0, 1.0, 4).unwrap();
    let v = grid.sample(|x| 0.7 * x[0] * x[0] + 0.2 * x[0]);
    let rho0 = grid.sample(|x| 1.0 + 0.4 * (2.0 * x[0]).sin());
    let spec = ProblemSpec::new(
        grid.clone(),
        EquationKind::FokkerPlanck { potential: v.clone() },
        rho0.clone(),
    )
    .unwrap();
    let mut sim = Simulation::new(spec).unwrap();
    let dt = sim.dt();
    sim.step().unwrap();

    let m: Vec<f64> = v.iter().map(|vi| (-vi).exp()).collect();
    let coeff = gradflow::CoefficientField::new(&grid, m.clone()).unwrap();
    let a = assemble_step_matrix(&grid, &coeff, dt).unwrap().to_dense();
    let w = lumped_weights(&grid);
    let rhs: Vec<f64> = (0..grid.n_nodes()).map(|i| w.value(i) * rho0[i]).collect();
    let g = a.lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
    for i in 0..grid.n_nodes() {
        let expect = m[i] * g[i];
        let got = sim.state().rho[i];
        assert!((got - expect).abs() <= 1e-10, "node {i}: {got} vs {expect}");
    }
}

#[test]
fn keller_segel_dissipates_energy_and_conserves_mass() {
    for order in [ElementOrder::Q1, ElementOrder::Q2] {
        let grid = Grid::square(order, 0.0, 2.0, 8).unwrap();
        let rho0 = grid.sample(|x| 1.5 + (x[0] - 1.0) * 0.3 + 0.4 * (x[1] * 2.0).cos());
        let spec = ProblemSpec::new(
            grid,
            EquationKind::KellerSegel { alpha: 1.0, source: None },
            rho0,
        )
        .unwrap();
        let mut sim = Simulation::new(spec).unwrap();
        let d0 = sim.initial_diagnostics().unwrap();
        let mut prev_energy = d0.energy;
        for _ in 0..15 {
            let d = sim.step().unwrap();
            assert!((d.mass - d0.mass).abs() <= 1e-10 * d0.mass, "order {order:?}");
            assert!(
                d.energy <= prev_energy + 1e-9 * prev_energy.abs().max(1.0),
                "order {order:?}: energy rose {prev_energy} -> {}",
                d.energy
            );
            assert!(d.min_rho > 0.0);
            prev_energy = d.energy;
        }
    }
}

#[test]
fn keller_segel_source_adds_weighted_mass_linearly() {
    let grid = Grid::square(ElementOrder::Q2, 0.0, 1.0, 4).unwrap();
    let f = grid.sample(|x| 0.3 + x[0] - x[1]);
    let rho0 = vec![2.0; grid.n_nodes()];
    let w = lumped_weights(&grid);
    let source_mass = w.dot(&f);
    let spec = ProblemSpec::new(
        grid,
        EquationKind::KellerSegel { alpha: 1.0, source: Some(f) },
        rho0,
    )
    .unwrap();
    let mut sim = Simulation::new(spec).unwrap();
    let m0 = sim.initial_diagnostics().unwrap().mass;
    let dt = sim.dt();
    for n in 1..=5 {
        let d = sim.step().unwrap();
        let expect = m0 + source_mass * dt * n as f64;
        assert!((d.mass - expect).abs() <= 1e-10 * expect.abs().max(1.0));
    }
}

#[test]
fn time_refinement_is_first_order_against_exact_solution() {
    // Ornstein-Uhlenbeck: V = x^2/2, rho(t) is the centered Gaussian with
    // variance 1 + (s0 - 1) exp(-2t); the domain is wide enough that the
    // truncated no-flux boundary is invisible at these tolerances
    let s0 = 0.5f64;
    let t_end = 0.5f64;
    let variance = |t: f64| 1.0 + (s0 - 1.0) * (-2.0 * t).exp();
    let gaussian = |x: f64, s2: f64| (-x * x / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();

    let grid = Grid::line(ElementOrder::Q2, -6.0, 6.0, 64).unwrap();
    let h = grid.h(0);
    let exact: Vec<f64> = grid.sample(|x| gaussian(x[0], variance(t_end)));
    let mut errors = Vec::new();
    for steps in [4usize, 8, 16, 32] {
        let v = grid.sample(|x| 0.5 * x[0] * x[0]);
        let rho0 = grid.sample(|x| gaussian(x[0], variance(0.0)));
        let mut spec =
            ProblemSpec::new(grid.clone(), EquationKind::FokkerPlanck { potential: v }, rho0)
                .unwrap();
        spec.dt = DtPolicy::Fixed(t_end / steps as f64);
        let mut sim = Simulation::new(spec).unwrap();
        let r = sim.run(EndCriterion::FinalTime(t_end));
        assert_eq!(r.outcome, RunOutcome::ReachedFinalTime);
        let err: f64 = sim
            .state()
            .rho
            .iter()
            .zip(&exact)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            * h;
        errors.push(err.sqrt());
    }
    let orders: Vec<f64> =
        errors.windows(2).map(|p| (p[0] / p[1]).log2()).collect();
    for o in &orders {
        assert!(*o >= 0.9, "time orders {orders:?} from errors {errors:?}");
    }
}

#[test]
fn explicit_step_preserves_steady_state() {
    let grid = Grid::line(ElementOrder::Q1, -1.0, 1.0, 32).unwrap();
    let h = grid.h(0);
    let v = grid.sample(|x| x[0].cos());
    let rho0: Vec<f64> = v.iter().map(|vi| 3.0 * (-vi).exp()).collect();
    let mut spec =
        ProblemSpec::new(grid, EquationKind::FokkerPlanck { potential: v }, rho0).unwrap();
    spec.dt = DtPolicy::Fixed(h * h / 8.0);
    let mut sim = Simulation::new(spec).unwrap();
    let d = sim.step_explicit().unwrap();
    assert!(d.linf_drho <= 1e-12, "steady state moved by {}", d.linf_drho);
}

#[test]
fn explicit_step_detects_instability() {
    let grid = Grid::line(ElementOrder::Q1, -1.0, 1.0, 32).unwrap();
    let h = grid.h(0);
    let v = grid.sample(|_| 0.0);
    let rho0 = grid.sample(|x| 1.0 + 0.9 * (std::f64::consts::PI * x[0] * 8.0).cos());
    let mut spec =
        ProblemSpec::new(grid, EquationKind::FokkerPlanck { potential: v }, rho0).unwrap();
    // far beyond the parabolic limit dt ~ h^2/2
    spec.dt = DtPolicy::Fixed(4.0 * h * h);
    let mut sim = Simulation::new(spec).unwrap();
    let mut failed = false;
    for _ in 0..50 {
        match sim.step_explicit() {
            Ok(_) => continue,
            Err(StepError::Unstable { .. }) => {
                failed = true;
                break;
            }
            Err(other) => panic!("unexpected error {other}"),
        }
    }
    assert!(failed, "oscillatory blow-up was not detected");
}

#[test]
fn potential_below_overflow_limit_aborts_construction() {
    let grid = Grid::line(ElementOrder::Q1, 0.0, 1.0, 4).unwrap();
    let v = vec![-800.0; grid.n_nodes()];
    let spec =
        ProblemSpec::new(grid, EquationKind::FokkerPlanck { potential: v }, vec![1.0; 5])
            .unwrap();
    match Simulation::new(spec) {
        Err(StepError::BlowUp { value, .. }) => assert_eq!(value, 800.0),
        other => panic!("expected blow-up, got {:?}", other.is_ok()),
    }
}

#[test]
fn implicit_dt_is_not_cfl_limited() {
    // the implicit stepper takes dt = h stably where the explicit stepper
    // at the same dt fails at once
    let grid = Grid::line(ElementOrder::Q1, -1.0, 1.0, 32).unwrap();
    let v = grid.sample(|x| 0.5 * x[0] * x[0]);
    let rho0 = grid.sample(|x| 1.0 + 0.8 * (3.0 * x[0]).sin().powi(2));
    let spec = ProblemSpec::new(
        grid.clone(),
        EquationKind::FokkerPlanck { potential: v.clone() },
        rho0.clone(),
    )
    .unwrap();
    let mut implicit = Simulation::new(spec.clone()).unwrap();
    for _ in 0..10 {
        let d = implicit.step().unwrap();
        assert!(d.min_rho > 0.0);
    }
    let mut explicit = Simulation::new(spec).unwrap();
    let mut ok_steps = 0;
    for _ in 0..10 {
        match explicit.step_explicit() {
            Ok(_) => ok_steps += 1,
            Err(_) => break,
        }
    }
    assert!(ok_steps < 10, "explicit Euler at dt = h should go unstable");
}
