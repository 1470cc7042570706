//! Built-in problem setups: a linear Fokker-Planck relaxation with a known
//! transient, a Keller-Segel accuracy test with a manufactured steady
//! state, and the sub/supercritical-mass chemotaxis runs.

use gradflow::{ElementOrder, EquationKind, Grid, ProblemSpec};
use std::f64::consts::PI;

/// Pointwise exact solution, callable from the grid sampler.
pub type ExactSolution = Box<dyn Fn(&[f64]) -> f64 + Sync>;

/// How a preset ends if the user does not override it.
#[derive(Debug, Clone, Copy)]
pub enum DefaultEnd {
    FinalTime(f64),
    Steady { tol: f64, max_time: f64 },
}

#[derive(Debug, Clone, Copy)]
pub struct Preset {
    pub name: &'static str,
    pub summary: &'static str,
    /// Square domain (lo, hi) on both axes.
    pub domain: (f64, f64),
    /// Default grid resolution in nodes per axis.
    pub default_nodes: usize,
    pub end: DefaultEnd,
}

pub const PRESETS: [Preset; 4] = [
    Preset {
        name: "fp_gaussian",
        summary: "Fokker-Planck relaxation of a Gaussian toward exp(-(x^2+y^2)/2)/(2 pi)",
        domain: (-3.0, 3.0),
        default_nodes: 33,
        end: DefaultEnd::FinalTime(20.0),
    },
    Preset {
        name: "ks_steady_source",
        summary: "Keller-Segel accuracy test with a manufactured steady source",
        domain: (0.0, PI),
        default_nodes: 17,
        end: DefaultEnd::FinalTime(1.0),
    },
    Preset {
        name: "ks_subcritical",
        summary: "Keller-Segel with subcritical mass, relaxing to a bounded steady state",
        domain: (-2.0, 2.0),
        default_nodes: 101,
        end: DefaultEnd::Steady { tol: 1e-8, max_time: 50.0 },
    },
    Preset {
        name: "ks_supercritical",
        summary: "Keller-Segel with supercritical mass, concentrating toward blow-up",
        domain: (-2.0, 2.0),
        default_nodes: 141,
        end: DefaultEnd::FinalTime(0.8),
    },
];

pub fn find(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

impl Preset {
    /// Cells per axis reproducing `default_nodes` at the given order.
    pub fn default_cells(&self, order: ElementOrder) -> usize {
        (self.default_nodes - 1) / order.degree()
    }

    pub fn grid(&self, order: ElementOrder, cells: usize) -> Result<Grid, gradflow::Error> {
        Grid::square(order, self.domain.0, self.domain.1, cells)
    }

    /// Assembles the problem on the given grid.
    pub fn problem(&self, grid: Grid) -> Result<ProblemSpec, gradflow::Error> {
        let rho0 = grid.sample(|p| self.initial_density(p[0], p[1]));
        let equation = match self.name {
            "fp_gaussian" => EquationKind::FokkerPlanck {
                potential: grid.sample(|p| 0.5 * (p[0] * p[0] + p[1] * p[1])),
            },
            "ks_steady_source" => EquationKind::KellerSegel {
                alpha: 1.0,
                source: Some(grid.sample(|p| {
                    let (x, y) = (p[0], p[1]);
                    -3.0 * (2.0 * x).cos() * y.cos().powi(2)
                        - 3.0 * x.cos().powi(2) * (2.0 * y).cos()
                })),
            },
            "ks_subcritical" | "ks_supercritical" => {
                EquationKind::KellerSegel { alpha: 1.0, source: None }
            }
            other => unreachable!("unknown preset {other}"),
        };
        ProblemSpec::new(grid, equation, rho0)
    }

    pub fn initial_density(&self, x: f64, y: f64) -> f64 {
        match self.name {
            // the exact profile one unit of time after a point mass
            "fp_gaussian" => fp_exact(0.0, x, y),
            "ks_steady_source" => 3.0 * x.cos() * y.cos() + 3.0,
            "ks_subcritical" => 60.0 / (1.0 + 40.0 * (x * x + y * y)),
            "ks_supercritical" => 100.0 / (1.0 + 40.0 * (x * x + y * y)),
            other => unreachable!("unknown preset {other}"),
        }
    }

    /// Exact solution at run time `t` (time since the initial condition),
    /// when the preset has one in closed form.
    pub fn exact_solution(&self, t: f64) -> Option<ExactSolution> {
        match self.name {
            "fp_gaussian" => Some(Box::new(move |p| fp_exact(t, p[0], p[1]))),
            "ks_steady_source" => {
                Some(Box::new(|p| 3.0 * p[0].cos() * p[1].cos() + 3.0))
            }
            _ => None,
        }
    }
}

/// Centered Gaussian with variance `1 - exp(-2(1+t))`: the solution of
/// `d_t rho = div(grad rho + rho x)` started from a point mass one unit of
/// time before the run begins, which relaxes to `exp(-r^2/2)/(2 pi)`.
fn fp_exact(t: f64, x: f64, y: f64) -> f64 {
    let s = 1.0 - (-2.0 * (1.0 + t)).exp();
    (-(x * x + y * y) / (2.0 * s)).exp() / (2.0 * PI * s)
}
