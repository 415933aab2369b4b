//! Window averages of the flux and the two one- and two-dimensional
//! counterexamples: the dyadic coefficient, for which the window averages of
//! `w′` do not vanish, and the upper-triangular coefficient whose transpose
//! has a linearly growing corrector.

use super::{CheckVerdict, Measurement, Verdict};
use crate::defectsolve::growth_profile;
use crate::error::{Error, Result};
use crate::fields::CoefficientField;
use crate::quadrature::{integrate_with, QuadOptions};

/// Window averages of one direction in d = 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowAverages {
    pub y: f64,
    pub eps: f64,
    /// `∫₀¹ w′(y + x/ε) dx`.
    pub corrector_mean: f64,
    /// `∫₀¹ a w′(y + x/ε) dx`.
    pub flux_correction: f64,
    /// `∫₀¹ a (1 + w′)(y + x/ε) dx`.
    pub flux_mean: f64,
}

fn quad_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-14,
        rel_tol: 1e-13,
        max_intervals: 50_000,
    }
}

/// Integrates the three window averages for `a` and `w′` in d = 1.
/// `jumps` lists points of `ℝ` where either integrand may jump.
pub fn window_averages(
    a: &dyn Fn(f64) -> f64,
    dw: &dyn Fn(f64) -> f64,
    windows: &[(f64, f64)],
    jumps: &[f64],
) -> Result<Vec<WindowAverages>> {
    let opts = quad_opts();
    windows
        .iter()
        .map(|&(y, eps)| {
            if !(eps > 0.0) {
                return Err(Error::param("eps", "window scale must be positive"));
            }
            let z = |x: f64| y + x / eps;
            let breaks: Vec<f64> = jumps.iter().map(|j| (j - y) * eps).filter(|t| *t > 0.0 && *t < 1.0).collect();
            let corrector_mean = integrate_with(|x| dw(z(x)), 0.0, 1.0, &breaks, opts)?.value;
            let flux_correction = integrate_with(|x| a(z(x)) * dw(z(x)), 0.0, 1.0, &breaks, opts)?.value;
            let flux_mean = integrate_with(|x| a(z(x)) * (1.0 + dw(z(x))), 0.0, 1.0, &breaks, opts)?.value;
            Ok(WindowAverages {
                y,
                eps,
                corrector_mean,
                flux_correction,
                flux_mean,
            })
        })
        .collect()
}

/// Deviation of the window averages from `0` and from `a*`, required to
/// stay below `tol(ε_n)`.
pub fn averaged_flux_check(
    a: &dyn Fn(f64) -> f64,
    dw: &dyn Fn(f64) -> f64,
    a_star: f64,
    windows: &[(f64, f64)],
    jumps: &[f64],
    tol: &dyn Fn(f64) -> f64,
) -> Result<CheckVerdict> {
    let mut check = CheckVerdict::new("averaged_flux");
    for w in window_averages(a, dw, windows, jumps)? {
        let corr = w.corrector_mean.abs();
        let flux = (w.flux_mean - a_star).abs();
        check.measure(Measurement::at("corrector_mean_deviation", w.eps, corr));
        check.measure(Measurement::at("flux_mean_deviation", w.eps, flux));
        let t = tol(w.eps);
        check.require(corr <= t, format!("eps={:e}: |avg w'| = {corr:.3e} > {t:.3e}", w.eps));
        check.require(flux <= t, format!("eps={:e}: |avg a(1+w') - a*| = {flux:.3e} > {t:.3e}", w.eps));
    }
    Ok(check)
}

/// The dyadic windows with `w′ = (1 - a)/a`: passes iff `∫₀¹ a w′ = -1`
/// within `tol` on every window. Also reports `∫₀¹ w′` and `∫₀¹ a(1 + w′)`.
pub fn dyadic_counterexample(field: &CoefficientField, tol: f64) -> Result<(CheckVerdict, Vec<WindowAverages>)> {
    let windows = field.dyadic_windows();
    if windows.is_empty() {
        return Err(Error::param("family", "dyadic windows need the dyadic family"));
    }
    let a = |z: f64| field.scalar(&[z]);
    let dw = |z: f64| (1.0 - a(z)) / a(z);
    let jumps: Vec<f64> = windows.iter().flat_map(|&(s, l)| [s, s + l]).collect();
    // window n: y_n = 2^n, ε_n = ln(1+n)/2^n, so x ∈ [0, 1] covers it exactly
    let sampled: Vec<(f64, f64)> = windows.iter().map(|&(s, l)| (s, 1.0 / l)).collect();
    let avgs = window_averages(&a, &dw, &sampled, &jumps)?;
    let mut check = CheckVerdict::new("dyadic_counterexample");
    for w in &avgs {
        check.measure(Measurement::at("int_a_dw", w.eps, w.flux_correction));
        check.measure(Measurement::at("int_dw", w.eps, w.corrector_mean));
        check.measure(Measurement::at("int_a_1_plus_dw", w.eps, w.flux_mean));
        let dev = (w.flux_correction + 1.0).abs();
        check.require(
            dev <= tol,
            format!("y={}: |int a w' + 1| = {dev:.3e} > {tol:.1e}", w.y),
        );
    }
    if avgs.iter().all(|w| (w.corrector_mean + 0.5).abs() <= tol) {
        check.note("int w' = -1/2 on every window: the corrector averages do not vanish");
    }
    if avgs.iter().all(|w| (w.flux_mean - 1.0).abs() <= tol) {
        check.note("int a(1+w') = 1 = a* on every window: the flux averages converge");
    }
    Ok((check, avgs))
}

/// Options for [`transpose_counterexample`].
#[derive(Clone, Debug)]
pub struct TransposeOptions {
    /// Dyadic separation scales of the growth fit.
    pub scales: Vec<f64>,
    pub base_points: usize,
    /// Sample points of the divergence check.
    pub div_points: usize,
    pub min_exponent: f64,
    pub seed: u64,
}

impl Default for TransposeOptions {
    fn default() -> Self {
        TransposeOptions {
            scales: (4..=14).map(|k| 2f64.powi(k)).collect(),
            base_points: 256,
            div_points: 4096,
            min_exponent: 0.9,
            seed: 0,
        }
    }
}

/// For `a = I + γ(x₂) e₁⊗e₂`: checks `div(a e_k) = 0` at sample points by
/// central differences, so the correctors of `a` vanish, and fits the growth
/// exponent of the explicit transpose corrector `w^T_{e₁} = -∫₀^{x₂} γ`.
pub fn transpose_counterexample(field: &CoefficientField, opts: &TransposeOptions) -> Result<CheckVerdict> {
    let gamma = field
        .gamma()
        .ok_or_else(|| Error::param("family", "transpose counterexample needs the triangular family"))?;
    if gamma.sup() > 1.0 {
        return Err(Error::param("gamma_max", "|gamma| must not exceed 1"));
    }
    let mut check = CheckVerdict::new("transpose_counterexample");
    let top = opts.scales.iter().copied().fold(0.0, f64::max);
    let reach = 2.0 * top;
    let step = 1e-3;
    let mut div_max: f64 = 0.0;
    let mut flux_max: f64 = 0.0;
    for s in 0..opts.div_points {
        // deterministic low-discrepancy points covering the blocks out to `reach`
        let t1 = ((s as f64 + 0.5) * 0.618_033_988_749_895).fract();
        let t2 = ((s as f64 + 0.5) * 0.754_877_666_246_693).fract();
        let x = [reach * (2.0 * t1 - 1.0), reach * (2.0 * t2 - 1.0)];
        for k in 0..2 {
            let mut div = 0.0;
            for i in 0..2 {
                let mut p = x;
                let mut m = x;
                p[i] += step;
                m[i] -= step;
                div += (field.eval_matrix(&p)[(i, k)] - field.eval_matrix(&m)[(i, k)]) / (2.0 * step);
            }
            div_max = div_max.max(div.abs());
        }
        // (a^T (e₁ + ∇w^T))₂ = γ + ∂₂ w^T
        let dw2 = -(gamma.primitive(x[1] + step) - gamma.primitive(x[1] - step)) / (2.0 * step);
        flux_max = flux_max.max((gamma.value(x[1]) + dw2).abs());
    }
    check.measure(Measurement::new("max_abs_div_a_ek", div_max));
    check.measure(Measurement::new("max_abs_transpose_flux_residual", flux_max));
    check.require(div_max <= 1e-12, format!("max |div(a e_k)| = {div_max:.3e} > 1e-12"));
    check.require(flux_max <= 1e-5, format!("max |gamma + d2 w^T| = {flux_max:.3e} > 1e-5"));
    let lower = [-reach, -reach];
    let upper = [reach, reach];
    let profile = growth_profile(|x| Some(-gamma.primitive(x[1])), &lower, &upper, &opts.scales, opts.base_points, opts.seed)?;
    check.measure(Measurement::new("growth_exponent", profile.exponent));
    if gamma.sup() == 0.0 {
        check.require(profile.increments.iter().all(|v| *v == 0.0), "gamma = 0 but w^T does not vanish");
        check.note("gamma = 0: a = I and both correctors vanish");
        return Ok(check);
    }
    check.require(
        profile.exponent >= opts.min_exponent,
        format!("growth exponent {:.4} < {}", profile.exponent, opts.min_exponent),
    );
    if check.verdict == Verdict::Pass {
        check.note("a^T corrector non-sublinear");
    }
    Ok(check)
}
