use clap::{Args, Parser, Subcommand};
use gradflow_cli::commands::{self, CliError};
use gradflow_cli::config::RunConfig;
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "gradflow",
    about = "Structure-preserving solver for gradient-flow continuity equations",
    version
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Run a preset problem and write CSV/JSON artifacts.
    Run(CommonArgs),
    /// Refinement study against the preset's exact solution.
    Converge {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated nodes-per-axis list.
        #[arg(long, default_value = "9,17,33,65,129")]
        grids: String,
    },
    /// Certify the monotonicity of the configured first-step matrix.
    Certify(CommonArgs),
    /// Print the fully resolved configuration.
    DumpConfig(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Configuration file (flat `key = value`); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Element order: 1 or 2.
    #[arg(long)]
    order: Option<usize>,
    /// Cells per axis.
    #[arg(long)]
    cells: Option<usize>,
    /// Time-step factor (scaled policy) or value (fixed policy).
    #[arg(long)]
    dt: Option<f64>,
    /// `scaled` (dt = factor * h) or `fixed`.
    #[arg(long = "dt-policy")]
    dt_policy: Option<String>,
    /// Final time.
    #[arg(long = "T")]
    t_final: Option<f64>,
    /// Stop when max |rho change| per step falls below this.
    #[arg(long = "steady-tol")]
    steady_tol: Option<f64>,
    /// Output directory (default: $GRADFLOW_OUT or ./gradflow-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `advisory`, `strict`, or `off`.
    #[arg(long = "cert-mode")]
    cert_mode: Option<String>,
    /// Relative residual tolerance of the inner linear solver.
    #[arg(long = "pcg-tol")]
    pcg_tol: Option<f64>,
}

impl CommonArgs {
    fn build(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::config(format!("cannot read config {}: {e}", path.display()))
            })?;
            cfg.apply_file(&text, &path.display().to_string()).map_err(CliError::config)?;
        }
        let mut overrides: Vec<(&str, String)> = Vec::new();
        if let Some(v) = &self.preset {
            overrides.push(("preset", v.clone()));
        }
        if let Some(v) = self.order {
            overrides.push(("order", v.to_string()));
        }
        if let Some(v) = self.cells {
            overrides.push(("cells", v.to_string()));
        }
        if let Some(v) = self.dt {
            overrides.push(("dt", v.to_string()));
        }
        if let Some(v) = &self.dt_policy {
            overrides.push(("dt_policy", v.clone()));
        }
        if let Some(v) = self.t_final {
            overrides.push(("T", v.to_string()));
        }
        if let Some(v) = self.steady_tol {
            overrides.push(("steady_tol", v.to_string()));
        }
        if let Some(v) = &self.out {
            overrides.push(("out", v.display().to_string()));
        }
        if let Some(v) = &self.cert_mode {
            overrides.push(("cert_mode", v.clone()));
        }
        if let Some(v) = self.pcg_tol {
            overrides.push(("pcg_tol", v.to_string()));
        }
        for (key, value) in overrides {
            cfg.set(key, &value).map_err(CliError::config)?;
        }
        Ok(cfg)
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.verb {
        Verb::Run(args) => commands::cmd_run(&args.build()?),
        Verb::Converge { common, grids } => commands::cmd_converge(&common.build()?, &grids),
        Verb::Certify(args) => commands::cmd_certify(&args.build()?),
        Verb::DumpConfig(args) => commands::cmd_dump_config(&args.build()?),
    }
}

fn main() {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message);
            std::process::exit(e.code);
        }
    }
}
