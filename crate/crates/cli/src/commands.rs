//! The four CLI verbs. Each returns `Ok(())` or a [`CliError`] carrying the
//! process exit code: 2 config error, 3 solver failure, 4 certification
//! failure in strict mode, 5 blow-up abort.

use crate::cert::{
    certify_matrix, dense_oracle, initial_mobility, CertEnvelope, CertSet, StepCertifier,
    FULL_SCALE_DENSE_CAP, SUB_SCALE_CELLS,
};
use crate::config::RunConfig;
use crate::output::{self, DiagnosticsWriter};
use crate::presets::Preset;
use gradflow::monotonicity::{CertMethod, CertificateReport};
use gradflow::{
    scheme_operator, verify_monotone_dense, ElementOrder, EndCriterion, RunOutcome, RunResult,
    Simulation, StepError,
};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }
}

fn config_err<E: std::fmt::Display>(e: E) -> CliError {
    CliError::config(e.to_string())
}

fn io_err(what: &str, path: &Path, e: std::io::Error) -> CliError {
    CliError::config(format!("cannot {what} {}: {e}", path.display()))
}

/// Exit code for a failed or aborted run.
fn step_error_code(e: &StepError) -> i32 {
    match e {
        StepError::BlowUp { .. } | StepError::Unstable { .. } => 5,
        StepError::Solve(_) | StepError::NegativeDensity { .. } => 3,
        StepError::Invalid(_) => 2,
        StepError::Aborted(_) => 4,
    }
}

fn step_err(e: StepError) -> CliError {
    CliError { code: step_error_code(&e), message: e.to_string() }
}

/// Everything resolved from a config that the verbs share.
struct Resolved {
    preset: &'static Preset,
    sim_spec: gradflow::ProblemSpec,
    end: EndCriterion,
    dt: f64,
}

fn resolve(cfg: &RunConfig) -> Result<Resolved, CliError> {
    let preset = cfg.preset().map_err(CliError::config)?;
    let order = cfg.element_order();
    let cells = cfg.resolve_cells(preset);
    let grid = preset.grid(order, cells).map_err(config_err)?;
    let policy = cfg.resolve_dt_policy().map_err(CliError::config)?;
    let dt = policy.resolve(grid.h(0)).map_err(config_err)?;
    let mut sim_spec = preset.problem(grid).map_err(config_err)?;
    sim_spec.dt = policy;
    sim_spec.pcg_tol = cfg.pcg_tol;
    let end = cfg.resolve_end(preset);
    Ok(Resolved { preset, sim_spec, end, dt })
}

fn create_out_dir(cfg: &RunConfig) -> Result<std::path::PathBuf, CliError> {
    let out = cfg.resolve_out();
    std::fs::create_dir_all(&out).map_err(|e| io_err("create output directory", &out, e))?;
    Ok(out)
}

fn write_config_txt(out: &Path, text: &str) -> Result<(), CliError> {
    let cfg_path = out.join("config.txt");
    output::write_text(&cfg_path, text).map_err(|e| io_err("write", &cfg_path, e))
}

pub fn cmd_run(cfg: &RunConfig) -> Result<(), CliError> {
    let r = resolve(cfg)?;
    let mut dump_cfg = cfg.clone();
    dump_cfg.order = Some(cfg.element_order().degree());
    let out = create_out_dir(cfg)?;
    write_config_txt(&out, &dump_cfg.resolved_for_dump(r.preset).dump())?;

    let equation = r.sim_spec.equation.clone();
    let mut sim = Simulation::new(r.sim_spec).map_err(step_err)?;
    let csv_path = out.join("diagnostics.csv");
    let mut csv = DiagnosticsWriter::create(&csv_path).map_err(|e| io_err("write", &csv_path, e))?;
    let mut certifier = StepCertifier::new(cfg.cert_mode, &equation, r.end);
    let mut stream_err: Option<std::io::Error> = None;

    let t0 = Instant::now();
    let result = sim.run_observed(r.end, |sim, diag| {
        if let Err(e) = csv.row(diag) {
            stream_err = Some(e);
            return Err(StepError::Aborted("diagnostics stream failed".into()));
        }
        certifier.observe(sim, diag)
    });
    let wall = t0.elapsed();

    let state = sim.state();
    let fields_path = out.join("fields.csv");
    output::write_fields(&fields_path, sim.grid(), &state.rho, state.c.as_deref())
        .map_err(|e| io_err("write", &fields_path, e))?;
    let envelope = certifier.into_envelope();
    let cert_path = out.join("certificates.json");
    output::write_json(&cert_path, &envelope).map_err(|e| io_err("write", &cert_path, e))?;

    let summary = render_summary(r.preset, cfg, &sim, &result, &envelope, wall.as_secs_f64());
    let summary_path = out.join("summary.txt");
    output::write_text(&summary_path, &summary).map_err(|e| io_err("write", &summary_path, e))?;
    print!("{summary}");
    println!("artifacts: {}", out.display());

    match result.error {
        None => Ok(()),
        Some(e) => {
            if let Some(io) = stream_err {
                return Err(CliError { code: 3, message: format!("diagnostics stream failed: {io}") });
            }
            Err(step_err(e))
        }
    }
}

fn render_summary(
    preset: &Preset,
    cfg: &RunConfig,
    sim: &Simulation,
    result: &RunResult,
    envelope: &CertEnvelope,
    wall_s: f64,
) -> String {
    let grid = sim.grid();
    let mut s = String::new();
    let _ = writeln!(s, "preset: {} ({})", preset.name, preset.summary);
    let _ = writeln!(
        s,
        "grid: order {}, {n}x{n} nodes ({} cells per axis, h = {:.6})",
        grid.order().degree(),
        grid.cells_per_axis(),
        grid.h(0),
        n = grid.nodes_per_axis(),
    );
    let _ = writeln!(s, "dt: {} ({})", sim.dt(), cfg.dt_policy);
    let steps = result.trajectory.len().saturating_sub(1);
    let outcome = match &result.outcome {
        RunOutcome::ReachedFinalTime => {
            format!("reached final time t = {} in {steps} steps", sim.state().t)
        }
        RunOutcome::ReachedSteady { residual } => format!(
            "reached steady state at t = {} after {steps} steps (residual {residual:.3e})",
            sim.state().t
        ),
        RunOutcome::Aborted => match &result.error {
            Some(e) => format!("aborted after {steps} steps: {e}"),
            None => format!("aborted after {steps} steps"),
        },
    };
    let _ = writeln!(s, "outcome: {outcome}");
    if let (Some(first), Some(last)) = (result.trajectory.first(), result.trajectory.last()) {
        let _ = writeln!(
            s,
            "mass: {:.6e} -> {:.6e} (drift {:.3e})",
            first.mass,
            last.mass,
            (last.mass - first.mass).abs()
        );
        let any_nan = result.trajectory.iter().any(|d| d.energy.is_nan());
        let nonincreasing = result
            .trajectory
            .windows(2)
            .all(|w| w[1].energy <= w[0].energy + 1e-9 * w[0].energy.abs().max(1.0));
        let verdict = if any_nan {
            "undefined at some steps: density left the positive cone"
        } else if nonincreasing {
            "nonincreasing: yes"
        } else {
            "nonincreasing: NO"
        };
        let _ = writeln!(s, "energy: {:.6e} -> {:.6e} ({verdict})", first.energy, last.energy);
        let min_rho = result.trajectory.iter().map(|d| d.min_rho).fold(f64::INFINITY, f64::min);
        let min_after = result.trajectory[1..]
            .iter()
            .map(|d| d.min_rho)
            .fold(f64::INFINITY, f64::min);
        let positivity = if min_rho > 0.0 {
            "positive throughout"
        } else if result.trajectory.len() > 1 && min_after > 0.0 {
            "nonnegative initially, positive at every later step"
        } else {
            "NOT positive"
        };
        let _ = writeln!(s, "min rho: {min_rho:.6e} over the run ({positivity})");
    }
    let passing = envelope.reports.iter().filter(|r| r.any_pass).count();
    let _ = writeln!(
        s,
        "certificates: mode {}, {} steps checked, {} with a passing certificate",
        envelope.mode, envelope.steps_certified, passing
    );
    let _ = writeln!(s, "wall time: {wall_s:.2} s");
    s
}

pub fn method_name(m: CertMethod) -> &'static str {
    match m {
        CertMethod::RowSumMMatrix => "row-sum M-matrix",
        CertMethod::LorenzSharp => "Lorenz sharp",
        CertMethod::LorenzSufficient => "Lorenz sufficient",
        CertMethod::DenseOracle => "dense oracle",
    }
}

pub fn cmd_certify(cfg: &RunConfig) -> Result<(), CliError> {
    let r = resolve(cfg)?;
    let mut dump_cfg = cfg.clone();
    dump_cfg.order = Some(cfg.element_order().degree());
    let out = create_out_dir(cfg)?;
    write_config_txt(&out, &dump_cfg.resolved_for_dump(r.preset).dump())?;
    let grid = &r.sim_spec.grid;

    let coeff = initial_mobility(grid, &r.sim_spec.equation, &r.sim_spec.rho0).map_err(step_err)?;
    let mut certificates = certify_matrix(grid, &coeff, r.dt).map_err(config_err)?;

    if grid.n_nodes() <= FULL_SCALE_DENSE_CAP {
        let a = scheme_operator(grid, &coeff, r.dt).map_err(config_err)?;
        certificates.push(verify_monotone_dense(&a).map_err(config_err)?);
    } else {
        let cells = SUB_SCALE_CELLS[grid.order().degree() - 1];
        let sub_grid = r.preset.grid(grid.order(), cells).map_err(config_err)?;
        let sub_nodes = sub_grid.nodes_per_axis();
        let policy = cfg.resolve_dt_policy().map_err(CliError::config)?;
        let sub_dt = policy.resolve(sub_grid.h(0)).map_err(config_err)?;
        let sub_spec = r.preset.problem(sub_grid.clone()).map_err(config_err)?;
        let mut rep =
            dense_oracle(&sub_grid, &sub_spec.equation, &sub_spec.rho0, sub_dt).map_err(step_err)?;
        rep.notes.push(format!(
            "system dimension {} exceeds the full-scale cap {}; oracle run on the same \
             problem at {sub_nodes}x{sub_nodes} nodes, dt = {sub_dt}",
            grid.n_nodes(),
            FULL_SCALE_DENSE_CAP,
        ));
        certificates.push(rep);
    }

    print!("{}", render_certificates(&certificates, r.dt));
    let any_pass = certificates.iter().any(|c| c.pass);
    let envelope = CertEnvelope {
        mode: "certify".into(),
        steps_certified: 1,
        reports: vec![CertSet { step: 0, t: 0.0, dt: r.dt, any_pass, certificates }],
    };
    let cert_path = out.join("certificates.json");
    output::write_json(&cert_path, &envelope).map_err(|e| io_err("write", &cert_path, e))?;
    println!("report: {}", cert_path.display());
    Ok(())
}

fn render_certificates(reports: &[CertificateReport], dt: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "first-step matrix certification (dt = {dt})");
    for rep in reports {
        let verdict = if rep.pass { "PASS" } else { "FAIL" };
        let _ = write!(s, "  {:<18} {verdict}", method_name(rep.method));
        if let Some(m) = rep.worst_margin {
            let _ = write!(s, "  worst margin {m:+.3e}");
        }
        if rep.failing_count > 0 {
            let _ = write!(s, "  ({} failing)", rep.failing_count);
        }
        let _ = writeln!(s);
        if let Some(bound) = rep.implied_dt_lower_bound {
            let _ = writeln!(s, "{:21}dt > {bound:.6e} would satisfy every cell", "");
        }
        for note in &rep.notes {
            let _ = writeln!(s, "{:21}note: {note}", "");
        }
    }
    s
}

/// One grid of a convergence study.
#[derive(Debug)]
struct ConvergenceRow {
    order: usize,
    nodes: usize,
    l2: f64,
    linf: f64,
}

pub fn cmd_converge(cfg: &RunConfig, grids: &str) -> Result<(), CliError> {
    let preset = cfg.preset().map_err(CliError::config)?;
    if preset.exact_solution(0.0).is_none() {
        return Err(CliError::config(format!(
            "preset '{}' has no closed-form exact solution to compare against",
            preset.name
        )));
    }
    let node_counts: Vec<usize> = grids
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| format!("bad node count '{s}'")))
        .collect::<Result<_, _>>()
        .map_err(CliError::config)?;
    if node_counts.is_empty() {
        return Err(CliError::config("empty grid list"));
    }
    let orders = match cfg.order {
        Some(o) => vec![o],
        None => vec![1, 2],
    };

    let dyadic = node_counts.windows(2).all(|w| w[1] == 2 * w[0] - 1);
    if !dyadic {
        eprintln!(
            "warning: grid list is not a dyadic refinement (next = 2*prev - 1); \
             convergence orders are omitted"
        );
    }

    // one worker per (order, grid); results keep the task order
    let mut tasks = Vec::new();
    for &order in &orders {
        for &nodes in &node_counts {
            tasks.push((order, nodes));
        }
    }
    let mut rows: Vec<Result<ConvergenceRow, CliError>> = Vec::new();
    std::thread::scope(|scope| {
        let handles: Vec<_> = tasks
            .iter()
            .map(|&(order, nodes)| {
                let cfg = cfg.clone();
                scope.spawn(move || converge_one(&cfg, preset, order, nodes))
            })
            .collect();
        for h in handles {
            rows.push(h.join().expect("convergence worker panicked"));
        }
    });
    let rows: Vec<ConvergenceRow> = rows.into_iter().collect::<Result<_, _>>()?;

    let table = render_convergence(&rows, dyadic);
    print!("{table}");

    let out = create_out_dir(cfg)?;
    write_config_txt(&out, &cfg.dump())?;
    let csv_path = out.join("convergence.csv");
    output::write_text(&csv_path, &convergence_csv(&rows, dyadic))
        .map_err(|e| io_err("write", &csv_path, e))?;
    println!("report: {}", csv_path.display());
    Ok(())
}

fn converge_one(
    cfg: &RunConfig,
    preset: &Preset,
    order: usize,
    nodes: usize,
) -> Result<ConvergenceRow, CliError> {
    let elem = ElementOrder::from_degree(order).map_err(config_err)?;
    let degree = elem.degree();
    if nodes < 2 || (nodes - 1) % degree != 0 {
        return Err(CliError::config(format!(
            "{nodes} nodes per axis is not reachable at order {order} \
             (need 1 + {degree}k for some positive k)"
        )));
    }
    let cells = (nodes - 1) / degree;
    let grid = preset.grid(elem, cells).map_err(config_err)?;
    let policy = cfg.resolve_dt_policy().map_err(CliError::config)?;
    let mut spec = preset.problem(grid).map_err(config_err)?;
    spec.dt = policy;
    spec.pcg_tol = cfg.pcg_tol;
    let mut sim = Simulation::new(spec).map_err(step_err)?;
    let end = cfg.resolve_end(preset);
    let result = sim.run(end);
    if let Some(e) = result.error {
        return Err(CliError {
            code: step_error_code(&e),
            message: format!("order {order}, {nodes}x{nodes}: {e}"),
        });
    }

    let grid = sim.grid();
    let exact = preset
        .exact_solution(sim.state().t)
        .expect("checked before fan-out");
    let mut sum_sq = 0.0;
    let mut linf: f64 = 0.0;
    for (i, &v) in sim.state().rho.iter().enumerate() {
        let (ix, iy) = grid.unflat(i);
        let p = [grid.axis_coord(0, ix), grid.axis_coord(1, iy)];
        let err = (v - exact(&p)).abs();
        sum_sq += err * err;
        linf = linf.max(err);
    }
    let l2 = (grid.h(0) * grid.h(1) * sum_sq).sqrt();
    Ok(ConvergenceRow { order, nodes, l2, linf })
}

/// log2 error ratios down each order's column; `None` on the first row.
fn attach_orders(rows: &[ConvergenceRow], dyadic: bool) -> Vec<(Option<f64>, Option<f64>)> {
    rows.iter()
        .enumerate()
        .map(|(k, row)| {
            if !dyadic || k == 0 || rows[k - 1].order != row.order {
                return (None, None);
            }
            let prev = &rows[k - 1];
            (Some((prev.l2 / row.l2).log2()), Some((prev.linf / row.linf).log2()))
        })
        .collect()
}

fn render_convergence(rows: &[ConvergenceRow], dyadic: bool) -> String {
    let orders = attach_orders(rows, dyadic);
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:>5} {:>9} {:>13} {:>8} {:>13} {:>8}",
        "order", "grid", "l2 error", "l2 ord", "linf error", "linf ord"
    );
    for (row, (o2, oinf)) in rows.iter().zip(&orders) {
        let fmt_ord = |o: &Option<f64>| match o {
            Some(v) => format!("{v:>8.2}"),
            None => format!("{:>8}", "-"),
        };
        let _ = writeln!(
            s,
            "{:>5} {:>9} {:>13.4e} {} {:>13.4e} {}",
            row.order,
            format!("{n}x{n}", n = row.nodes),
            row.l2,
            fmt_ord(o2),
            row.linf,
            fmt_ord(oinf)
        );
    }
    s
}

fn convergence_csv(rows: &[ConvergenceRow], dyadic: bool) -> String {
    let orders = attach_orders(rows, dyadic);
    let mut s = String::from("order,nodes,l2_error,l2_order,linf_error,linf_order\n");
    for (row, (o2, oinf)) in rows.iter().zip(&orders) {
        let cell = |o: &Option<f64>| o.map(output::fmt_float).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            row.order,
            row.nodes,
            output::fmt_float(row.l2),
            cell(o2),
            output::fmt_float(row.linf),
            cell(oinf)
        );
    }
    s
}

pub fn cmd_dump_config(cfg: &RunConfig) -> Result<(), CliError> {
    let dump = if cfg.preset.is_empty() {
        cfg.dump()
    } else {
        let preset = cfg.preset().map_err(CliError::config)?;
        let mut resolved = cfg.clone();
        resolved.order = Some(cfg.element_order().degree());
        resolved.resolved_for_dump(preset).dump()
    };
    print!("{dump}");
    Ok(())
}
