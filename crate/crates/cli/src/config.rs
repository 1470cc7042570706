//! Flat `key = value` run configuration with command-line overrides. The
//! dump format is re-runnable: feeding a written config back reproduces the
//! run bit for bit.

use gradflow::{DtPolicy, ElementOrder, EndCriterion};
use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use crate::presets::{self, DefaultEnd, Preset};

/// Monotonicity-certification behavior during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertMode {
    /// Check and report, never block.
    Advisory,
    /// Abort the run when no certificate passes for a step.
    Strict,
    Off,
}

impl fmt::Display for CertMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CertMode::Advisory => "advisory",
            CertMode::Strict => "strict",
            CertMode::Off => "off",
        })
    }
}

impl std::str::FromStr for CertMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "advisory" => Ok(CertMode::Advisory),
            "strict" => Ok(CertMode::Strict),
            "off" => Ok(CertMode::Off),
            other => Err(format!("unknown cert_mode '{other}' (advisory | strict | off)")),
        }
    }
}

/// Time-step policy selector; `dt` is the factor (scaled) or the value
/// (fixed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DtPolicyKind {
    /// `dt = factor * h` (the default, with factor 1).
    Scaled,
    Fixed,
}

impl fmt::Display for DtPolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DtPolicyKind::Scaled => "scaled",
            DtPolicyKind::Fixed => "fixed",
        })
    }
}

impl std::str::FromStr for DtPolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scaled" => Ok(DtPolicyKind::Scaled),
            "fixed" => Ok(DtPolicyKind::Fixed),
            other => Err(format!("unknown dt_policy '{other}' (scaled | fixed)")),
        }
    }
}

/// Fully resolved configuration of one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    /// Element order; `None` means the default (2) for a single run and
    /// both orders for a convergence study.
    pub order: Option<usize>,
    pub cells: Option<usize>,
    pub dt_policy: DtPolicyKind,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub steady_tol: Option<f64>,
    pub out: Option<PathBuf>,
    pub cert_mode: CertMode,
    pub pcg_tol: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            preset: String::new(),
            order: None,
            cells: None,
            dt_policy: DtPolicyKind::Scaled,
            dt: None,
            t_final: None,
            steady_tol: None,
            out: None,
            cert_mode: CertMode::Advisory,
            pcg_tol: gradflow::solver::DEFAULT_PCG_TOL,
        }
    }
}

impl RunConfig {
    /// Parses a flat `key = value` file. Unknown keys are errors so typos
    /// do not silently change a run.
    pub fn apply_file(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("{origin}:{}: expected 'key = value'", lineno + 1))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| format!("{origin}:{}: {e}", lineno + 1))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value '{v}' for {key}"))
        }
        match key {
            "preset" => self.preset = value.to_string(),
            "order" => {
                let o: usize = num(key, value)?;
                ElementOrder::from_degree(o).map_err(|e| e.to_string())?;
                self.order = Some(o);
            }
            "cells" => self.cells = Some(num(key, value)?),
            "dt" => self.dt = Some(num(key, value)?),
            "dt_policy" => self.dt_policy = value.parse()?,
            "T" => self.t_final = Some(num(key, value)?),
            "steady_tol" => self.steady_tol = Some(num(key, value)?),
            "out" => self.out = Some(PathBuf::from(value)),
            "cert_mode" => self.cert_mode = value.parse()?,
            "pcg_tol" => self.pcg_tol = num(key, value)?,
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    /// Renders the configuration in the same format `apply_file` reads.
    pub fn dump(&self) -> String {
        // shortest representation that parses back to the same bits;
        // scientific notation once plain decimal gets unwieldy
        fn flt(v: f64) -> String {
            if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e6) {
                format!("{v:e}")
            } else {
                format!("{v}")
            }
        }
        let mut map: BTreeMap<&str, String> = BTreeMap::new();
        map.insert("preset", self.preset.clone());
        if let Some(o) = self.order {
            map.insert("order", o.to_string());
        }
        if let Some(c) = self.cells {
            map.insert("cells", c.to_string());
        }
        map.insert("dt_policy", self.dt_policy.to_string());
        if let Some(dt) = self.dt {
            map.insert("dt", flt(dt));
        }
        if let Some(t) = self.t_final {
            map.insert("T", flt(t));
        }
        if let Some(tol) = self.steady_tol {
            map.insert("steady_tol", flt(tol));
        }
        if let Some(out) = &self.out {
            map.insert("out", out.display().to_string());
        }
        map.insert("cert_mode", self.cert_mode.to_string());
        map.insert("pcg_tol", flt(self.pcg_tol));
        let mut s = String::new();
        for (k, v) in map {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        }
        s
    }

    pub fn preset(&self) -> Result<&'static Preset, String> {
        if self.preset.is_empty() {
            return Err("no preset selected (pass --preset or set it in the config)".into());
        }
        presets::find(&self.preset).ok_or_else(|| {
            let names: Vec<&str> = presets::PRESETS.iter().map(|p| p.name).collect();
            format!("unknown preset '{}'; available: {}", self.preset, names.join(", "))
        })
    }

    pub fn element_order(&self) -> ElementOrder {
        ElementOrder::from_degree(self.order.unwrap_or(2)).expect("order validated on entry")
    }

    /// Cells per axis: explicit, or the preset default for this order.
    pub fn resolve_cells(&self, preset: &Preset) -> usize {
        self.cells.unwrap_or_else(|| preset.default_cells(self.element_order()))
    }

    pub fn resolve_dt_policy(&self) -> Result<DtPolicy, String> {
        match (self.dt_policy, self.dt) {
            (DtPolicyKind::Scaled, factor) => Ok(DtPolicy::CellScaled(factor.unwrap_or(1.0))),
            (DtPolicyKind::Fixed, Some(dt)) => Ok(DtPolicy::Fixed(dt)),
            (DtPolicyKind::Fixed, None) => {
                Err("dt_policy = fixed requires an explicit dt".into())
            }
        }
    }

    /// End criterion: explicit steady tolerance wins, then explicit final
    /// time, then the preset default.
    pub fn resolve_end(&self, preset: &Preset) -> EndCriterion {
        const STEADY_TIME_CAP: f64 = 1e4;
        if let Some(tol) = self.steady_tol {
            return EndCriterion::Steady {
                tol,
                max_time: self.t_final.unwrap_or(STEADY_TIME_CAP),
            };
        }
        if let Some(t) = self.t_final {
            return EndCriterion::FinalTime(t);
        }
        match preset.end {
            DefaultEnd::FinalTime(t) => EndCriterion::FinalTime(t),
            DefaultEnd::Steady { tol, max_time } => EndCriterion::Steady { tol, max_time },
        }
    }

    /// Output directory: flag/config, else `GRADFLOW_OUT`, else
    /// `./gradflow-out`.
    pub fn resolve_out(&self) -> PathBuf {
        if let Some(out) = &self.out {
            return out.clone();
        }
        if let Ok(env) = std::env::var("GRADFLOW_OUT") {
            if !env.is_empty() {
                return PathBuf::from(env);
            }
        }
        PathBuf::from("gradflow-out")
    }

    /// The fully resolved configuration, with preset defaults made
    /// explicit, as written to `config.txt` next to the run outputs.
    pub fn resolved_for_dump(&self, preset: &Preset) -> RunConfig {
        let mut cfg = self.clone();
        cfg.cells = Some(self.resolve_cells(preset));
        if cfg.dt_policy == DtPolicyKind::Scaled && cfg.dt.is_none() {
            cfg.dt = Some(1.0);
        }
        match self.resolve_end(preset) {
            EndCriterion::FinalTime(t) => {
                cfg.t_final = Some(t);
                cfg.steady_tol = None;
            }
            EndCriterion::Steady { tol, max_time } => {
                cfg.steady_tol = Some(tol);
                cfg.t_final = Some(max_time);
            }
        }
        cfg
    }
}
