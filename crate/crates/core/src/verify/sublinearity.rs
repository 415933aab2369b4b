//! Translated-increment ratios `sup_y |v(x+y) - v(y)| / (1+|x|)` at dyadic
//! `|x|`.

use super::{CheckVerdict, Measurement};
use crate::cellsolve::solve_cell;
use crate::defectsolve::{assemble_full_corrector, solve_defect_correctors, DefectBox, TruncationPlan};
use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::fv::FaceAveraging;
use crate::linalg::SolverOptions;

/// Ratio per scale; `None` where no sampled pair was evaluable.
pub fn increment_ratios(
    v: &dyn Fn(&[f64]) -> Option<f64>,
    translates: &[Vec<f64>],
    scales: &[f64],
    directions: &[Vec<f64>],
) -> Vec<Option<f64>> {
    scales
        .iter()
        .map(|&s| {
            let mut best: Option<f64> = None;
            let mut x = vec![0.0; translates.first().map_or(0, |y| y.len())];
            for y in translates {
                let Some(vy) = v(y) else { continue };
                for e in directions {
                    for (xa, (ya, ea)) in x.iter_mut().zip(y.iter().zip(e)) {
                        *xa = ya + s * ea;
                    }
                    if let Some(vx) = v(&x) {
                        let r = (vx - vy).abs() / (1.0 + s);
                        best = Some(best.map_or(r, |b: f64| b.max(r)));
                    }
                }
            }
            best
        })
        .collect()
}

/// Passes iff every ratio is at most `(1 + slack)` times the previous one.
pub fn sublinearity_check(
    v: &dyn Fn(&[f64]) -> Option<f64>,
    translates: &[Vec<f64>],
    scales: &[f64],
    directions: &[Vec<f64>],
    slack: f64,
) -> Result<CheckVerdict> {
    if scales.len() < 2 {
        return Err(Error::InsufficientSamples(format!("sublinearity needs at least 2 scales, got {}", scales.len())));
    }
    if translates.is_empty() || directions.is_empty() {
        return Err(Error::Empty("translates or directions".into()));
    }
    let ratios = increment_ratios(v, translates, scales, directions);
    let mut check = CheckVerdict::new("sublinearity");
    let mut prev: Option<(f64, f64)> = None;
    for (&s, r) in scales.iter().zip(&ratios) {
        let Some(r) = *r else {
            return Err(Error::InsufficientSamples(format!("no evaluable pair at |x| = {s}")));
        };
        check.measure(Measurement::new(format!("ratio |x|={s}"), r));
        if let Some((ps, pr)) = prev {
            check.require(
                r <= (1.0 + slack) * pr,
                format!("ratio {r:.4e} at |x|={s} > (1+{slack}) * {pr:.4e} at |x|={ps}"),
            );
        }
        prev = Some((s, r));
    }
    Ok(check)
}

#[derive(Clone, Debug)]
pub struct SublinearityOptions {
    pub cells_per_period: usize,
    /// Half-width of the defect box, in periods.
    pub half_width: usize,
    /// Translates fill `[-translate_radius, translate_radius]^d` with unit step.
    pub translate_radius: usize,
    pub scales: Vec<f64>,
    /// Unit directions sampled in the plane of the first two axes.
    pub directions: usize,
    pub slack: f64,
}

impl Default for SublinearityOptions {
    fn default() -> Self {
        SublinearityOptions {
            cells_per_period: 8,
            half_width: 32,
            translate_radius: 8,
            scales: vec![2.0, 4.0, 8.0, 16.0],
            directions: 8,
            slack: 0.1,
        }
    }
}

/// Runs [`sublinearity_check`] on every full corrector `w_{e_k}` of a
/// defect field, solved on a box of `opts.half_width` periods.
pub fn corrector_sublinearity(field: &CoefficientField, opts: &SublinearityOptions) -> Result<CheckVerdict> {
    let d = field.dim();
    let reach = opts.translate_radius as f64 + opts.scales.iter().copied().fold(0.0, f64::max);
    if reach >= opts.half_width as f64 {
        return Err(Error::param("half_width", "translates plus scales leave the defect box"));
    }
    let solver = SolverOptions::default();
    let cell = solve_cell(field, opts.cells_per_period, FaceAveraging::Auto, &solver)?;
    let defect = if field.has_defect() {
        let plan = TruncationPlan::new(opts.half_width, opts.cells_per_period);
        let setup = DefectBox::new(field, &cell, &plan, FaceAveraging::Auto)?;
        let ws = solve_defect_correctors(field, &cell, &setup, &solver)?;
        Some((setup, ws))
    } else {
        None
    };
    let set = assemble_full_corrector(&cell, defect)?;
    let t = opts.translate_radius as i64;
    let mut translates = Vec::new();
    let mut idx = vec![-t; d];
    loop {
        translates.push(idx.iter().map(|&i| i as f64).collect::<Vec<_>>());
        let mut a = 0;
        while a < d {
            idx[a] += 1;
            if idx[a] <= t {
                break;
            }
            idx[a] = -t;
            a += 1;
        }
        if a == d {
            break;
        }
    }
    let directions: Vec<Vec<f64>> = (0..opts.directions.max(1))
        .map(|j| {
            let th = std::f64::consts::TAU * j as f64 / opts.directions.max(1) as f64;
            let mut e = vec![0.0; d];
            e[0] = th.cos();
            if d > 1 {
                e[1] = th.sin();
            }
            e
        })
        .collect();
    let mut out = CheckVerdict::new("sublinearity");
    for k in 0..d {
        let c = sublinearity_check(&|y| set.eval(k, y), &translates, &opts.scales, &directions, opts.slack)?;
        for m in c.measured {
            out.measure(Measurement::new(format!("w_e{} {}", k + 1, m.name), m.value));
        }
        for n in c.notes {
            out.require(false, format!("w_e{}: {n}", k + 1));
        }
    }
    Ok(out)
}
