//! Run artifacts: streamed diagnostics CSV, final-field CSV, certification
//! JSON, and the human-readable summary. All numeric CSV columns carry 17
//! significant digits so a re-run can be compared bit for bit.

use gradflow::{Grid, StepDiagnostics};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

pub const DIAGNOSTICS_HEADER: &str = "step,t,mass,energy,min_rho,linf_drho,pcg_iters";
pub const FIELDS_HEADER: &str = "x,y,rho,c";

/// 17-significant-digit rendering used for every CSV float.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn diagnostics_row(d: &StepDiagnostics) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        d.step,
        fmt_float(d.t),
        fmt_float(d.mass),
        fmt_float(d.energy),
        fmt_float(d.min_rho),
        fmt_float(d.linf_drho),
        d.pcg_iters
    )
}

/// Streams diagnostics rows as the run produces them; each row is flushed
/// so a crashed run leaves a usable file.
pub struct DiagnosticsWriter {
    out: BufWriter<File>,
}

impl DiagnosticsWriter {
    pub fn create(path: &Path) -> std::io::Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{DIAGNOSTICS_HEADER}")?;
        out.flush()?;
        Ok(DiagnosticsWriter { out })
    }

    pub fn row(&mut self, d: &StepDiagnostics) -> std::io::Result<()> {
        writeln!(self.out, "{}", diagnostics_row(d))?;
        self.out.flush()
    }
}

/// Final nodal fields in flat node order; the `c` column is left empty for
/// problems without a chemoattractant. 1D grids write `y = 0`.
pub fn write_fields(
    path: &Path,
    grid: &Grid,
    rho: &[f64],
    c: Option<&[f64]>,
) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{FIELDS_HEADER}")?;
    for i in 0..grid.n_nodes() {
        let (ix, iy) = grid.unflat(i);
        let x = grid.axis_coord(0, ix);
        let y = if grid.dimension() == 2 { grid.axis_coord(1, iy) } else { 0.0 };
        let c_col = match c {
            Some(c) => fmt_float(c[i]),
            None => String::new(),
        };
        writeln!(out, "{},{},{},{}", fmt_float(x), fmt_float(y), fmt_float(rho[i]), c_col)?;
    }
    out.flush()
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(text.as_bytes())?;
    out.flush()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(text.as_bytes())?;
    out.write_all(b"\n")?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use gradflow::ElementOrder;

    #[test]
    fn floats_carry_seventeen_significant_digits() {
        assert_eq!(fmt_float(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_float(-0.1875), "-1.8750000000000000e-1");
        let v = 0.1 + 0.2;
        assert_eq!(fmt_float(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn fields_rows_follow_flat_node_order() {
        let dir = std::env::temp_dir().join("gradflow-fields-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("fields.csv");
        let grid = Grid::square(ElementOrder::Q1, 0.0, 1.0, 2).unwrap();
        let rho: Vec<f64> = (0..9).map(|i| i as f64).collect();
        write_fields(&path, &grid, &rho, None).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 10);
        assert_eq!(lines[0], FIELDS_HEADER);
        // second node is (x=0.5, y=0): x varies fastest
        assert!(lines[2].starts_with("5.0000000000000000e-1,0.0000000000000000e0,"));
        assert!(lines[2].ends_with(','));
        std::fs::remove_dir_all(&dir).ok();
    }
}
