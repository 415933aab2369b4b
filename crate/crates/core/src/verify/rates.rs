//! Log-log rate fits against `ε` and their verdicts.

use super::Verdict;
use crate::error::{Error, Result};
use crate::stats::{self, LineFit};
use serde::{Deserialize, Serialize};

/// Fitted model for `value(ε)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RateModel {
    /// `C ε^s`.
    #[default]
    Pure,
    /// `C ε^s ln(2 + 1/ε)`.
    Log,
}

impl RateModel {
    pub fn as_str(self) -> &'static str {
        match self {
            RateModel::Pure => "pure",
            RateModel::Log => "log",
        }
    }
}

pub const MIN_RATE_SAMPLES: usize = 4;

/// Least squares on `(ln ε, ln value)`; the log model divides by
/// `ln(2 + 1/ε)` first. A larger slope means faster decay as `ε → 0`.
pub fn rate_fit(eps: &[f64], values: &[f64], model: RateModel) -> Result<LineFit> {
    rate_fit_min(eps, values, model, MIN_RATE_SAMPLES)
}

/// [`rate_fit`] with a custom sample minimum, for sweeps whose resolution
/// budget only allows a few `ε`.
pub fn rate_fit_min(eps: &[f64], values: &[f64], model: RateModel, min_samples: usize) -> Result<LineFit> {
    if eps.len() != values.len() {
        return Err(Error::DimensionMismatch {
            expected: eps.len(),
            got: values.len(),
        });
    }
    if eps.len() < min_samples.max(2) {
        return Err(Error::InsufficientSamples(format!(
            "rate fit needs at least {} samples, got {}",
            min_samples.max(2),
            eps.len()
        )));
    }
    if eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::param("eps", "must be strictly decreasing"));
    }
    if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::NonpositiveValue { index: i, value: *v });
    }
    let y: Vec<f64> = match model {
        RateModel::Pure => values.to_vec(),
        RateModel::Log => eps.iter().zip(values).map(|(e, v)| v / (2.0 + 1.0 / e).ln()).collect(),
    };
    let fit = stats::loglog(eps, &y);
    if !fit.slope.is_finite() {
        return Err(Error::param("values", "fit produced a non-finite slope"));
    }
    Ok(fit)
}

/// Acceptance rule for a fitted slope.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RateCriterion {
    AtLeast { min: f64 },
    Within { target: f64, tol: f64 },
}

impl RateCriterion {
    /// Rule for `‖R‖_{L²}` and `‖∇R‖_{L²(Ω₁)}`: at least 0.8 when the
    /// predicted exponent is 1, otherwise within 0.15 of it.
    pub fn energy(nu: f64) -> Self {
        if nu >= 1.0 - 1e-12 {
            RateCriterion::AtLeast { min: 0.8 }
        } else {
            RateCriterion::Within { target: nu, tol: 0.15 }
        }
    }

    /// Rule for `‖∇R‖_{L^q(Ω₁)}`.
    pub fn lq(nu: f64) -> Self {
        RateCriterion::AtLeast { min: nu - 0.15 }
    }

    /// Rule for `‖H‖`.
    pub fn source(nu: f64) -> Self {
        RateCriterion::AtLeast { min: nu - 0.1 }
    }

    pub fn accepts(&self, slope: f64) -> bool {
        match *self {
            RateCriterion::AtLeast { min } => slope >= min,
            RateCriterion::Within { target, tol } => (slope - target).abs() <= tol,
        }
    }

    pub fn describe(&self, slope: f64) -> String {
        match *self {
            RateCriterion::AtLeast { min } => format!("slope {slope:.4} >= {min:.4}"),
            RateCriterion::Within { target, tol } => format!("|slope {slope:.4} - {target:.4}| <= {tol:.4}"),
        }
    }
}

/// Samples of one norm over an `ε` sweep with its fit and verdict.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub experiment: String,
    pub norm_name: String,
    pub eps: Vec<f64>,
    /// Fine spacing per sample.
    pub h: Vec<f64>,
    pub values: Vec<f64>,
    pub model: RateModel,
    pub fit: Option<LineFit>,
    pub nu_expected: f64,
    pub criterion: Option<RateCriterion>,
    pub verdict: Verdict,
    pub notes: Vec<String>,
}

impl RateReport {
    /// Fits and judges the samples. `floor`, when given, is the per-sample
    /// discretization floor: if every value is below it the verdict is a
    /// degenerate pass whatever the slope.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        experiment: &str,
        norm_name: &str,
        eps: Vec<f64>,
        h: Vec<f64>,
        values: Vec<f64>,
        model: RateModel,
        nu_expected: f64,
        criterion: Option<RateCriterion>,
        floor: Option<&[f64]>,
    ) -> Self {
        Self::evaluate_min(experiment, norm_name, eps, h, values, model, nu_expected, criterion, floor, MIN_RATE_SAMPLES)
    }

    /// [`RateReport::evaluate`] with a custom sample minimum.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate_min(
        experiment: &str,
        norm_name: &str,
        eps: Vec<f64>,
        h: Vec<f64>,
        values: Vec<f64>,
        model: RateModel,
        nu_expected: f64,
        criterion: Option<RateCriterion>,
        floor: Option<&[f64]>,
        min_samples: usize,
    ) -> Self {
        let mut notes = Vec::new();
        let fit = match rate_fit_min(&eps, &values, model, min_samples) {
            Ok(f) => Some(f),
            Err(e) => {
                notes.push(format!("no fit: {e}"));
                None
            }
        };
        let degenerate = floor.is_some_and(|fl| fl.len() == values.len() && values.iter().zip(fl).all(|(v, f)| v.abs() <= *f));
        let verdict = if degenerate {
            notes.push("all values at the discretization floor".into());
            Verdict::DegeneratePass
        } else {
            match (criterion, &fit) {
                (None, _) => Verdict::Info,
                (Some(_), None) => Verdict::Inconclusive,
                (Some(c), Some(f)) => {
                    let ok = c.accepts(f.slope);
                    if !ok {
                        notes.push(format!("violated: {}", c.describe(f.slope)));
                    }
                    Verdict::from_bool(ok)
                }
            }
        };
        RateReport {
            experiment: experiment.to_string(),
            norm_name: norm_name.to_string(),
            eps,
            h,
            values,
            model,
            fit,
            nu_expected,
            criterion,
            verdict,
            notes,
        }
    }

    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// `ν_r = min(1, d / r)`.
pub fn nu_r(d: usize, r: f64) -> f64 {
    (d as f64 / r).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dyadic(k: std::ops::RangeInclusive<i32>) -> Vec<f64> {
        k.map(|k| 2f64.powi(-k)).collect()
    }

    #[test]
    fn synthetic_square_root_law() {
        let eps = dyadic(3..=8);
        let v: Vec<f64> = eps.iter().map(|e| 3.0 * e.sqrt()).collect();
        let f = rate_fit(&eps, &v, RateModel::Pure).unwrap();
        assert!((f.slope - 0.5).abs() < 1e-12);
    }

    #[test]
    fn log_factor_is_divided_out() {
        let eps = dyadic(3..=8);
        let v: Vec<f64> = eps.iter().map(|e| e * (2.0 + 1.0 / e).ln()).collect();
        let pure = rate_fit(&eps, &v, RateModel::Pure).unwrap();
        // independent evaluation of the synthetic model
        assert!((pure.slope - 0.7470).abs() < 5e-4, "{}", pure.slope);
        let log = rate_fit(&eps, &v, RateModel::Log).unwrap();
        assert!((log.slope - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_samples() {
        let eps = dyadic(2..=6);
        let f = rate_fit(&eps, &[2.0; 5], RateModel::Pure).unwrap();
        assert_eq!(f.slope, 0.0);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn rejects_bad_samples() {
        let eps = dyadic(2..=6);
        assert!(matches!(
            rate_fit(&eps, &[1.0, 1.0, 0.0, 1.0, 1.0], RateModel::Pure),
            Err(Error::NonpositiveValue { index: 2, .. })
        ));
        assert!(rate_fit(&eps[..3], &[1.0; 3], RateModel::Pure).is_err());
        let mut up = eps.clone();
        up.reverse();
        assert!(rate_fit(&up, &[1.0; 5], RateModel::Pure).is_err());
    }

    #[test]
    fn criteria() {
        assert!(RateCriterion::energy(1.0).accepts(0.85));
        assert!(!RateCriterion::energy(1.0).accepts(0.75));
        assert!(RateCriterion::energy(0.5).accepts(0.62));
        assert!(!RateCriterion::energy(0.5).accepts(0.3));
        assert!(RateCriterion::source(0.5).accepts(0.41));
        assert_eq!(nu_r(2, 4.0), 0.5);
        assert_eq!(nu_r(2, 1.0), 1.0);
    }

    #[test]
    fn degenerate_floor_overrides_slope() {
        let eps = dyadic(2..=5);
        let r = RateReport::evaluate(
            "x",
            "n",
            eps.clone(),
            eps.clone(),
            vec![1e-9; 4],
            RateModel::Pure,
            1.0,
            Some(RateCriterion::energy(1.0)),
            Some(&[1e-8; 4]),
        );
        assert_eq!(r.verdict, Verdict::DegeneratePass);
        let r = RateReport::evaluate("x", "n", eps.clone(), eps, vec![1.0; 4], RateModel::Pure, 1.0, Some(RateCriterion::energy(1.0)), None);
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.notes[0].contains("violated"));
    }

    proptest! {
        #[test]
        fn recovers_power_laws(s in -1.0f64..2.0, c in 0.1f64..10.0) {
            let eps = dyadic(2..=7);
            let v: Vec<f64> = eps.iter().map(|e| c * e.powf(s)).collect();
            let f = rate_fit(&eps, &v, RateModel::Pure).unwrap();
            prop_assert!((f.slope - s).abs() < 1e-12);
        }
    }
}
