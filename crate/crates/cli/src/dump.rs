//! Grid dumps: raw little-endian `f64` values plus a JSON sidecar.
//!
//! Values are component-major; within a component axis 0 varies fastest.

use crate::config::{default_norms, Experiment, Suite};
use crate::run::pipeline_options;
use homlab::cellsolve::solve_cell;
use homlab::pipeline::Prepared;
use homlab::GridField;
use serde::Serialize;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
pub struct Sidecar<'a> {
    pub name: &'a str,
    pub experiment: &'a str,
    pub file: String,
    pub dtype: &'static str,
    pub byte_order: &'static str,
    pub layout: &'static str,
    pub shape: &'a [usize],
    pub components: usize,
    pub spacing: f64,
    pub lower: &'a [f64],
    pub upper: Vec<f64>,
    pub periodic: bool,
    pub eps: Option<f64>,
}

pub fn write_field(dir: &Path, experiment: &str, name: &str, field: &GridField, eps: Option<f64>) -> io::Result<PathBuf> {
    let grid = field.grid();
    let file = format!("{name}.bin");
    let bytes: Vec<u8> = field.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(dir.join(&file), bytes)?;
    let side = Sidecar {
        name,
        experiment,
        file: file.clone(),
        dtype: "f64",
        byte_order: "little",
        layout: "component-major, axis 0 fastest",
        shape: grid.shape(),
        components: field.n_components(),
        spacing: grid.spacing(),
        lower: grid.lower(),
        upper: grid.upper(),
        periodic: grid.is_periodic(),
        eps,
    };
    let mut text = serde_json::to_string_pretty(&side)?;
    text.push('\n');
    std::fs::write(dir.join(format!("{name}.json")), text)?;
    Ok(dir.join(file))
}

/// Cell correctors on the torus and, for the largest `ε` of the sweep, the
/// remainder, its gradient and `H` on `Ω`. Only theorem11 experiments dump.
/// Numerical failures are returned as messages; I/O errors abort.
pub fn dump_experiment(root: &Path, ex: &Experiment) -> io::Result<Vec<String>> {
    let mut warnings = Vec::new();
    if !ex.suites.contains(&Suite::Theorem11) {
        return Ok(warnings);
    }
    let dir = root.join(ex.id());
    std::fs::create_dir_all(&dir)?;
    let opts = pipeline_options(ex);
    let id = ex.id();
    match solve_cell(&ex.field, opts.cells_per_period, opts.averaging, &opts.solver) {
        Ok(cell) => {
            for (k, c) in cell.correctors.iter().enumerate() {
                write_field(&dir, id, &format!("corrector_e{}", k + 1), &c.w, None)?;
            }
        }
        Err(e) => warnings.push(format!("{id}: cell correctors not dumped: {e}")),
    }
    let eps = &ex.config.eps;
    let eps_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let eps_max = eps.iter().copied().fold(0.0, f64::max);
    let mut popts = opts;
    let norms = ex.config.norms.clone().unwrap_or_else(default_norms);
    popts.skip_potential = !norms.iter().any(|n| n.needs_potential());
    let run = Prepared::new(&ex.field, popts, eps_min).and_then(|p| p.run(eps_max));
    match run {
        Ok(run) => {
            let b = &run.bundle;
            write_field(&dir, id, "remainder", &b.r, Some(eps_max))?;
            write_field(&dir, id, "remainder_gradient", &b.grad_r, Some(eps_max))?;
            if let Some(h) = &b.h {
                write_field(&dir, id, "h_field", h, Some(eps_max))?;
            }
        }
        Err(e) => warnings.push(format!("{id}: remainder not dumped: {e}")),
    }
    Ok(warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use homlab::Grid;

    #[test]
    fn dump_round_trips_values_and_shape() {
        let dir = tempfile::tempdir().unwrap();
        let grid = Grid::torus(2, 4).unwrap();
        let vals: Vec<f64> = (0..16).map(|i| i as f64 * 0.5 - 1.0).collect();
        let f = GridField::scalar(grid, vals.clone()).unwrap();
        let path = write_field(dir.path(), "x", "w", &f, None).unwrap();
        let bytes = std::fs::read(path).unwrap();
        let back: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        assert_eq!(back, vals);
        let side: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("w.json")).unwrap()).unwrap();
        assert_eq!(side["shape"], serde_json::json!([4, 4]));
        assert_eq!(side["periodic"], serde_json::json!(true));
    }
}
