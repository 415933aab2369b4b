//! Discrete Green functions of `a(x/ε)` against the homogenized one at a
//! fixed pair of points, with positivity, reciprocity and decay bounds.

use super::rates::{RateCriterion, RateModel, RateReport};
use super::{CheckVerdict, Measurement, Verdict};
use crate::bvpsolve::{discrete_green, Coefficient};
use crate::cellsolve::solve_cell;
use crate::error::{Error, Result};
use crate::fields::{CoefficientField, Grid};
use crate::fv::FaceAveraging;
use crate::linalg::SolverOptions;

#[derive(Clone, Debug)]
pub struct GreenOptions {
    /// Cells per side of the cubic grid.
    pub cells: usize,
    /// Fine cells per period at the smallest `ε`; fixes `h` for the sweep.
    pub cells_per_period: usize,
    /// Pair separation `|x - y|` in cells along `e₁`.
    pub pair_cells: usize,
    pub eps: Vec<f64>,
    /// Accepted shortfall of the slope below `ν`.
    pub slope_slack: f64,
    /// Relative reciprocity tolerance.
    pub reciprocity_tol: f64,
    pub solver: SolverOptions,
}

impl Default for GreenOptions {
    fn default() -> Self {
        GreenOptions {
            cells: 48,
            cells_per_period: 8,
            pair_cells: 8,
            eps: vec![0.25, 0.125, 0.0625],
            slope_slack: 0.2,
            reciprocity_tol: 1e-6,
            solver: SolverOptions {
                tol: 1e-11,
                ..SolverOptions::default()
            },
        }
    }
}

/// Radial samples `(|x - y|, G, |∇G|)` along the axes through the source.
fn radial_samples(grid: &Grid, g: &crate::bvpsolve::GreenSample, src: &[usize], min_cells: usize) -> Vec<(f64, f64, f64)> {
    let d = grid.dim();
    let h = grid.spacing();
    let n = grid.shape()[0];
    let mut out = Vec::new();
    let gv = g.g.values();
    let gr = g.gradient.values();
    let len = grid.len();
    for a in 0..d {
        for sign in [-1i64, 1] {
            let mut k = min_cells as i64;
            loop {
                let pos = src[a] as i64 + sign * k;
                // two cells clear of the boundary
                if pos < 2 || pos > n as i64 - 3 {
                    break;
                }
                let mut idx = src.to_vec();
                idx[a] = pos as usize;
                let c = grid.linear(&idx);
                let grad = (0..d).map(|i| gr[i * len + c].powi(2)).sum::<f64>().sqrt();
                out.push((k as f64 * h, gv[c], grad));
                k += 1;
            }
        }
    }
    out
}

/// Runs the probe; failures of the three-dimensional probe stay failures here
/// and are downgraded by the caller's tier. In d = 2 the verdicts are
/// diagnostic.
pub fn green_estimates_check(field: &CoefficientField, opts: &GreenOptions) -> Result<(CheckVerdict, RateReport)> {
    let d = field.dim();
    if !(2..=3).contains(&d) {
        return Err(Error::param("dim", "the Green probe runs in d = 2 or 3"));
    }
    if opts.pair_cells < 4 {
        return Err(Error::param("pair_cells", "pairs need |x - y| >= 4h"));
    }
    if opts.eps.is_empty() {
        return Err(Error::Empty("eps list".into()));
    }
    let eps_min = opts.eps.iter().copied().fold(f64::INFINITY, f64::min);
    let h = eps_min / opts.cells_per_period as f64;
    let half = 0.5 * opts.cells as f64 * h;
    let grid = Grid::centered_box(d, half, h)?;
    let mid = opts.cells / 2;
    if mid + opts.pair_cells + 2 >= opts.cells {
        return Err(Error::UnderResolved {
            cells_per_period: opts.cells_per_period as f64,
            required: opts.pair_cells + 2,
        });
    }
    let src = vec![mid; d];
    let mut tgt = src.clone();
    tgt[0] += opts.pair_cells;
    let y = grid.center(grid.linear(&src));
    let x = grid.center(grid.linear(&tgt));
    let xc = grid.linear(&tgt);
    let yc = grid.linear(&src);
    let dist = opts.pair_cells as f64 * h;
    let cell = solve_cell(field, 8, FaceAveraging::Auto, &opts.solver)?;
    let a_star = cell.a_star.a_star;
    let g_star = discrete_green(&grid, Coefficient::Constant(a_star), &y, false, &opts.solver)?;
    let gs_xy = g_star.g.values()[xc];

    let mut check = CheckVerdict::new("green_estimates");
    check.measure(Measurement::new("pair_distance", dist));
    check.measure(Measurement::new("G_star(x,y)", gs_xy));
    let mut diffs = Vec::new();
    let mut decay = Vec::new();
    let mut grad_decay = Vec::new();
    for &e in &opts.eps {
        let coef = Coefficient::Oscillatory { field, eps: e };
        let g = discrete_green(&grid, coef, &y, false, &opts.solver)?;
        let gt = discrete_green(&grid, coef, &x, true, &opts.solver)?;
        let gv = g.g.values();
        let g_xy = gv[xc];
        let diff = (g_xy - gs_xy).abs();
        diffs.push(diff);
        check.measure(Measurement::at("G(x,y)", e, g_xy));
        check.measure(Measurement::at("abs_G_minus_G_star", e, diff));

        let top = gv.iter().copied().fold(0.0, f64::max);
        let low = gv.iter().copied().fold(f64::INFINITY, f64::min);
        check.measure(Measurement::at("min_G", e, low));
        check.require(
            low >= -opts.reciprocity_tol * top,
            format!("eps={e:e}: min G = {low:.3e} < 0 (max {top:.3e})"),
        );

        let recip = (g_xy - gt.g.values()[yc]).abs() / g_xy.abs().max(f64::MIN_POSITIVE);
        check.measure(Measurement::at("reciprocity", e, recip));
        check.require(
            recip <= opts.reciprocity_tol,
            format!("eps={e:e}: |G(x,y) - G^T(y,x)| / |G(x,y)| = {recip:.3e} > {:.1e}", opts.reciprocity_tol),
        );

        let radial = radial_samples(&grid, &g, &src, 4);
        let b0 = radial.iter().map(|(r, v, _)| v * r.powi(d as i32 - 2)).fold(0.0, f64::max);
        let b1 = radial.iter().map(|(r, _, gr)| gr * r.powi(d as i32 - 1)).fold(0.0, f64::max);
        check.measure(Measurement::at("sup_G_r^(d-2)", e, b0));
        check.measure(Measurement::at("sup_gradG_r^(d-1)", e, b1));
        decay.push(b0);
        grad_decay.push(b1);
    }
    let spread = |v: &[f64]| {
        let hi = v.iter().copied().fold(0.0, f64::max);
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        hi / lo
    };
    check.measure(Measurement::new("decay_bound_spread", spread(&decay)));
    check.measure(Measurement::new("gradient_bound_spread", spread(&grad_decay)));

    for (w, e) in diffs.windows(2).zip(opts.eps.windows(2)) {
        check.require(
            w[1] < w[0],
            format!("|G-G*| not decreasing: {:.3e} at eps={:e} vs {:.3e} at eps={:e}", w[1], e[1], w[0], e[0]),
        );
    }
    let nu = field.nu();
    let report = RateReport::evaluate_min(
        "green",
        "abs(G-G*):pair",
        opts.eps.clone(),
        vec![h; opts.eps.len()],
        diffs,
        RateModel::Pure,
        nu,
        Some(RateCriterion::AtLeast { min: nu - opts.slope_slack }),
        None,
        3,
    );
    if let Some(s) = report.slope() {
        check.measure(Measurement::new("slope", s));
    }
    if report.verdict != Verdict::Pass {
        check.verdict = Verdict::Fail;
        check.notes.extend(report.notes.iter().cloned());
    }
    if d == 2 {
        check.note("d = 2: diagnostic only");
        check.verdict = Verdict::Info;
    }
    Ok((check, report))
}
