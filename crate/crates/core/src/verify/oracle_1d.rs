//! Exact one-dimensional remainder for the slowly decaying defect
//! `a = 1 + ã`, `ã(z) = (1+|z|)^{-1/r} (1 + log(1+|z|)^{1+δ})^{-1/r}`.
//!
//! With `u* = (1 - x²)/2` on `(-1, 1)` the fluxes of `u^ε` and `u*` agree by
//! symmetry, so `(R^ε)′(x) = ε w(x/ε) = -ε ∫₀^{x/ε} ã/(1+ã) dz`.

use super::rates::{RateModel, RateReport};
use super::{CheckVerdict, Measurement, Verdict};
use crate::error::{Error, Result};
use crate::fields::{construct_field, FieldSpec};
use crate::pipeline::{PipelineOptions, Prepared};
use crate::quadrature::{integrate_with, QuadOptions};
use crate::twoscale::Manufactured;
use serde::Serialize;

#[derive(Clone, Debug)]
pub struct Oracle1dOptions {
    pub cells_per_period: usize,
    /// Accepted relative difference between pipeline and quadrature.
    pub rel_tol: f64,
    /// Half-width of the slope window around the target `1/r`.
    pub slope_tol: f64,
}

impl Default for Oracle1dOptions {
    fn default() -> Self {
        Oracle1dOptions {
            cells_per_period: 1024,
            rel_tol: 1e-6,
            slope_tol: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OraclePoint {
    pub eps: f64,
    pub x: f64,
    pub oracle: f64,
    pub pipeline: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Oracle1dReport {
    pub r: f64,
    pub delta: f64,
    pub points: Vec<OraclePoint>,
    /// `|(R^ε)′(1)|` against `ε`.
    pub raw: RateReport,
    /// Same samples divided by `log(1/ε)^{-(1+δ)/r}`, judged against `1/r`.
    pub adjusted: RateReport,
    pub check: CheckVerdict,
}

fn slow_defect(c: f64, r: f64, delta: f64, z: f64) -> f64 {
    let z = z.abs();
    c * (1.0 + z).powf(-1.0 / r) * (1.0 + (1.0 + z).ln().powf(1.0 + delta)).powf(-1.0 / r)
}

/// `-ε ∫₀^{x/ε} ã/(1+ã) dz` for the defect of amplitude `c`.
pub fn closed_form(c: f64, r: f64, delta: f64, eps: f64, x: f64) -> Result<f64> {
    if !(r > 1.0) || !(delta > 0.0) {
        return Err(Error::param("r, delta", "need r > 1 and delta > 0"));
    }
    if !(eps > 0.0) {
        return Err(Error::param("eps", "must be positive"));
    }
    if c == 0.0 {
        return Ok(0.0);
    }
    let end = x / eps;
    let mut breaks = Vec::new();
    let mut b = 1.0;
    while b < end.abs() {
        breaks.push(b * end.signum());
        b *= 2.0;
    }
    let opts = QuadOptions {
        abs_tol: 1e-15,
        rel_tol: 1e-13,
        max_intervals: 20_000,
    };
    let q = integrate_with(
        |z| {
            let t = slow_defect(c, r, delta, z);
            t / (1.0 + t)
        },
        0.0,
        end,
        &breaks,
        opts,
    )?;
    Ok(-eps * q.value)
}

/// Index of the face at `x` on a box grid starting at `lower` with spacing `h`.
fn face_at(lower: f64, h: f64, x: f64) -> Result<usize> {
    let m = (x - lower) / h;
    let k = m.round();
    if (m - k).abs() > 1e-9 || k < 0.0 {
        return Err(Error::param("x", "evaluation point is not a face of the fine grid"));
    }
    Ok(k as usize)
}

/// Runs the d = 1 pipeline for every `ε` and compares the assembled `(R^ε)′`
/// at `xs` with [`closed_form`]; then fits the `ε`-slope at `x = 1`.
pub fn oracle_1d(r: f64, delta: f64, eps: &[f64], xs: &[f64], opts: &Oracle1dOptions) -> Result<Oracle1dReport> {
    if !(r > 1.0) || !(delta > 0.0) {
        return Err(Error::param("r, delta", "need r > 1 and delta > 0"));
    }
    let eps_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    if eps.is_empty() || !eps_min.is_finite() {
        return Err(Error::Empty("eps list".into()));
    }
    let field = construct_field(&FieldSpec::new("slow-decay", 1).with("r", r).with("delta", delta))?;
    let popts = PipelineOptions {
        cells_per_period: opts.cells_per_period,
        half_width: 1.0,
        u_star: Some(Manufactured::parabola(1.0, 1.0)),
        skip_potential: true,
        ..PipelineOptions::default()
    };
    let prep = Prepared::new(&field, popts, eps_min)?;
    let a_star = prep.cell.a_star.a_star[(0, 0)];
    let mut check = CheckVerdict::new(format!("oracle_1d r={r}"));
    if (a_star - 1.0).abs() > 1e-12 {
        return Err(Error::param("background", format!("expected a* = 1, got {a_star}")));
    }
    let mut points = Vec::new();
    let mut at_one = Vec::new();
    for &e in eps {
        let run = prep.run(e)?;
        let h = run.grid.spacing();
        let lower = run.grid.lower()[0];
        for &x in xs {
            let oracle = closed_form(1.0, r, delta, e, x)?;
            let pipeline = run.bundle.face_grad_r[0][face_at(lower, h, x)?];
            let rel_err = (pipeline - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE);
            check.measure(Measurement::at(format!("rel_err x={x}"), e, rel_err));
            check.require(
                rel_err <= opts.rel_tol,
                format!("eps={e:e} x={x}: |pipeline {pipeline:.12e} - oracle {oracle:.12e}| / |oracle| = {rel_err:.3e} > {:.1e}", opts.rel_tol),
            );
            if x == 1.0 {
                at_one.push(pipeline.abs());
            }
            points.push(OraclePoint {
                eps: e,
                x,
                oracle,
                pipeline,
                rel_err,
            });
        }
    }
    let target = 1.0 / r;
    let hs: Vec<f64> = eps.iter().map(|e| e / opts.cells_per_period as f64).collect();
    let exp = (1.0 + delta) / r;
    let raw = RateReport::evaluate(
        "oracle1d",
        &format!("dR:abs(x=1) r={r}"),
        eps.to_vec(),
        hs.clone(),
        at_one.clone(),
        RateModel::Pure,
        target,
        None,
        None,
    );
    let adjusted_values = eps.iter().zip(&at_one).map(|(e, v)| v / (1.0 / e).ln().powf(-exp)).collect();
    let adjusted = RateReport::evaluate(
        "oracle1d",
        &format!("dR:abs(x=1)/log r={r}"),
        eps.to_vec(),
        hs,
        adjusted_values,
        RateModel::Pure,
        target,
        Some(super::RateCriterion::Within {
            target,
            tol: opts.slope_tol,
        }),
        None,
    );
    if let Some(s) = raw.slope() {
        check.measure(Measurement::new("raw_slope", s));
    }
    if let Some(s) = adjusted.slope() {
        check.measure(Measurement::new("adjusted_slope", s));
    }
    if adjusted.verdict != Verdict::Pass {
        check.verdict = Verdict::Fail;
        check.notes.extend(adjusted.notes.iter().cloned());
    }
    if (points.is_empty() || at_one.is_empty()) && check.verdict == Verdict::Pass {
        check.verdict = Verdict::Inconclusive;
        check.note("x = 1 not among the evaluation points");
    }
    Ok(Oracle1dReport {
        r,
        delta,
        points,
        raw,
        adjusted,
        check,
    })
}
