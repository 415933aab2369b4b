//! Interior Lipschitz ratio of `a(x/ε)`-harmonic functions:
//! `sup_{B_R} |∇v| / ((1/R) (avg_{B_2R} v²)^{1/2})`, with `B_R` the cube of
//! half-width `R`.

use super::{CheckVerdict, Measurement};
use crate::bvpsolve::{solve_dirichlet, Coefficient, DirichletProblem};
use crate::error::{Error, Result};
use crate::fields::{CoefficientField, Grid};
use crate::linalg::SolverOptions;
use crate::twoscale::Manufactured;

#[derive(Clone, Debug)]
pub struct LipschitzOptions {
    pub cells_per_period: usize,
    /// Boundary data on `∂B_2R`.
    pub boundary: Manufactured,
    /// Accepted `max/min` of the ratio over the sweep.
    pub max_spread: f64,
    pub solver: SolverOptions,
}

impl Default for LipschitzOptions {
    fn default() -> Self {
        LipschitzOptions {
            cells_per_period: 8,
            boundary: Manufactured::Quadratic {
                c: 0.0,
                b: vec![1.0, 0.0],
                q: vec![0.0, 0.5, 0.5, 0.0],
            },
            max_spread: 4.0,
            solver: SolverOptions::default(),
        }
    }
}

/// The ratio for one `ε`.
pub fn lipschitz_ratio(field: &CoefficientField, eps: f64, radius: f64, opts: &LipschitzOptions) -> Result<f64> {
    let d = field.dim();
    let h = eps / opts.cells_per_period as f64;
    let grid = Grid::centered_box(d, 2.0 * radius, h)?;
    let g = |x: &[f64]| opts.boundary.value(x);
    let problem = DirichletProblem::new(grid.clone(), Coefficient::Oscillatory { field, eps }, vec![0.0; grid.len()]).with_boundary(&g);
    let sol = solve_dirichlet(&problem, &opts.solver)?;
    let u = sol.u.values();
    let rms = (u.iter().map(|v| v * v).sum::<f64>() / u.len() as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::param("boundary", "the harmonic function vanishes identically"));
    }
    let grad = sol.cell_gradient()?;
    let gv = grad.values();
    let n = grid.len();
    let mut sup: f64 = 0.0;
    for (c, x) in grid.centers().enumerate() {
        if x.iter().all(|v| v.abs() <= radius) {
            let m = (0..d).map(|i| gv[i * n + c].powi(2)).sum::<f64>().sqrt();
            sup = sup.max(m);
        }
    }
    Ok(sup / (rms / radius))
}

/// Passes iff `max/min` of the ratio over `eps` is at most `max_spread`.
pub fn lipschitz_stability_check(field: &CoefficientField, eps: &[f64], radius: f64, opts: &LipschitzOptions) -> Result<CheckVerdict> {
    if eps.len() < 2 {
        return Err(Error::InsufficientSamples("Lipschitz stability needs at least 2 eps".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::param("radius", "must be positive"));
    }
    let mut check = CheckVerdict::new("lipschitz_stability");
    let mut ratios = Vec::with_capacity(eps.len());
    for &e in eps {
        let r = lipschitz_ratio(field, e, radius, opts)?;
        check.measure(Measurement::at("ratio", e, r));
        ratios.push(r);
    }
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = hi / lo;
    check.measure(Measurement::new("spread", spread));
    check.require(
        spread <= opts.max_spread,
        format!("max/min ratio {hi:.4e}/{lo:.4e} = {spread:.3} > {}", opts.max_spread),
    );
    Ok(check)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{construct_field, FieldSpec};
    use crate::verify::Verdict;

    fn linear() -> LipschitzOptions {
        LipschitzOptions {
            boundary: Manufactured::Quadratic {
                c: 0.0,
                b: vec![1.0, 0.0],
                q: vec![0.0; 4],
            },
            ..LipschitzOptions::default()
        }
    }

    #[test]
    fn linear_function_scales_exactly() {
        let f = construct_field(&FieldSpec::new("identity", 2)).unwrap();
        let opts = linear();
        let a = lipschitz_ratio(&f, 0.25, 0.5, &opts).unwrap();
        let b = lipschitz_ratio(&f, 0.125, 0.25, &opts).unwrap();
        // same h/R: identical discrete problems up to scaling
        assert!((a - b).abs() < 1e-8, "{a} {b}");
        // |∇v| = 1, rms of x₁ over (-2R, 2R) is 2R/√3 up to the midpoint rule
        let exact = 3f64.sqrt() / 2.0;
        assert!((a - exact).abs() < 1e-3, "{a}");
    }

    #[test]
    fn periodic_ratios_are_bounded() {
        let f = construct_field(&FieldSpec::new("trig", 2)).unwrap();
        let c = lipschitz_stability_check(&f, &[0.25, 0.125], 0.5, &LipschitzOptions::default()).unwrap();
        assert_eq!(c.verdict, Verdict::Pass, "{:?}", c.notes);
    }
}
