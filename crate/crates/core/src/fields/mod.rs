//! Coefficient fields `a = a_per + ã` and the grid containers used by the solvers.

mod checks;
mod grid;
mod matrix;

pub use checks::{
    defect_annulus_mass, defect_box_mass, holder_growth_sample, verify_ellipticity,
    EllipticityReport, SamplePlan,
};
pub use grid::{Components, FnField, Grid, GridField, PointField, MIN_RESOLUTION};
pub use matrix::Mat;

use crate::error::{Error, Result};
use crate::quadrature;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::f64::consts::PI;

/// User-facing description of a coefficient field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub family: String,
    pub dim: usize,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    /// Periodic background for defect families (`identity`, `trig`, `laminate`).
    #[serde(default)]
    pub background: Option<String>,
}

impl FieldSpec {
    pub fn new(family: &str, dim: usize) -> Self {
        FieldSpec {
            family: family.to_string(),
            dim,
            params: BTreeMap::new(),
            background: None,
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn on(mut self, background: &str) -> Self {
        self.background = Some(background.to_string());
        self
    }

    fn get(&self, name: &str, default: f64) -> Result<f64> {
        let v = self.params.get(name).copied().unwrap_or(default);
        if !v.is_finite() {
            return Err(Error::param(name, "must be finite"));
        }
        Ok(v)
    }
}

/// Regularity of the coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Regularity {
    Holder(f64),
    Discontinuous,
}

#[derive(Clone, Debug, PartialEq)]
enum Periodic {
    Identity,
    /// `base + amp * prod_i sin(2 pi x_i)` times the identity.
    Trig { base: f64, amp: f64 },
    /// `low` where `frac(x_1) < 1/2`, `high` elsewhere, times the identity.
    Laminate { low: f64, high: f64 },
}

impl Periodic {
    fn scalar(&self, x: &[f64]) -> f64 {
        match *self {
            Periodic::Identity => 1.0,
            Periodic::Trig { base, amp } => {
                base + amp * x.iter().map(|xi| (2.0 * PI * (xi - xi.floor())).sin()).product::<f64>()
            }
            Periodic::Laminate { low, high } => {
                if x[0] - x[0].floor() < 0.5 {
                    low
                } else {
                    high
                }
            }
        }
    }

    fn range(&self) -> (f64, f64) {
        match *self {
            Periodic::Identity => (1.0, 1.0),
            Periodic::Trig { base, amp } => (base - amp.abs(), base + amp.abs()),
            Periodic::Laminate { low, high } => (low.min(high), low.max(high)),
        }
    }

    fn regularity(&self) -> Regularity {
        match self {
            Periodic::Laminate { low, high } if low != high => Regularity::Discontinuous,
            _ => Regularity::Holder(1.0),
        }
    }
}

/// Transverse mollified dyadic-block profile `gamma = chi * gamma_0`.
#[derive(Clone, Debug, PartialEq)]
pub struct DyadicGamma {
    scale: f64,
    norm: f64,
}

const GAMMA_BLOCKS: i32 = 30;

impl DyadicGamma {
    fn new(scale: f64) -> Result<Self> {
        let norm = quadrature::integrate(Self::raw_bump, -1.0, 1.0)?;
        Ok(DyadicGamma { scale, norm })
    }

    fn raw_bump(t: f64) -> f64 {
        if t.abs() >= 1.0 {
            0.0
        } else {
            (-1.0 / (1.0 - t * t)).exp()
        }
    }

    /// Mollifier `chi` supported on `[-1, 1]` with unit mass.
    pub fn chi(&self, t: f64) -> f64 {
        Self::raw_bump(t) / self.norm
    }

    /// `X(s) = int_{-inf}^s chi`.
    fn chi_cdf(&self, s: f64) -> f64 {
        if s <= -1.0 {
            0.0
        } else if s >= 1.0 {
            1.0
        } else {
            quadrature::integrate(|t| self.chi(t), -1.0, s).unwrap_or(f64::NAN)
        }
    }

    /// `Y(s) = int_{-inf}^s X`.
    fn chi_cdf2(&self, s: f64) -> f64 {
        if s <= -1.0 {
            0.0
        } else if s >= 1.0 {
            s
        } else {
            quadrature::integrate(|t| (s - t) * self.chi(t), -1.0, s).unwrap_or(f64::NAN)
        }
    }

    fn blocks() -> impl Iterator<Item = (f64, f64)> {
        (0..GAMMA_BLOCKS).flat_map(|n| {
            let a = 2f64.powi(2 * n + 1);
            let b = 2f64.powi(2 * n + 2);
            [(a, b), (-b, -a)]
        })
    }

    /// Undecorated `gamma_0` (one half on the dyadic blocks).
    pub fn gamma0(&self, z: f64) -> f64 {
        self.scale
            * Self::blocks()
                .filter(|(a, b)| z >= *a && z <= *b)
                .map(|_| 0.5)
                .sum::<f64>()
    }

    pub fn value(&self, z: f64) -> f64 {
        let mut s = 0.0;
        for (a, b) in Self::blocks() {
            if z < a - 1.0 || z > b + 1.0 {
                continue;
            }
            s += self.chi_cdf(z - a) - self.chi_cdf(z - b);
        }
        0.5 * self.scale * s
    }

    /// `int_{-inf}^z (1_[a,b] * chi)`, split so that huge blocks do not cancel.
    fn block_primitive(&self, z: f64, a: f64, b: f64) -> f64 {
        if z - a <= -1.0 {
            0.0
        } else if z - b >= 1.0 {
            b - a
        } else {
            self.chi_cdf2(z - a) - self.chi_cdf2(z - b)
        }
    }

    /// Exact primitive `int_0^z gamma`.
    pub fn primitive(&self, z: f64) -> f64 {
        let mut s = 0.0;
        for (a, b) in Self::blocks() {
            s += self.block_primitive(z, a, b) - self.block_primitive(0.0, a, b);
        }
        0.5 * self.scale * s
    }

    pub fn sup(&self) -> f64 {
        0.5 * self.scale.abs()
    }

    /// Block edges, where the primitive changes slope.
    pub fn edges(&self) -> Vec<f64> {
        let mut e: Vec<f64> = Self::blocks().flat_map(|(a, b)| [a, b]).collect();
        e.sort_by(|x, y| x.partial_cmp(y).unwrap());
        e
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Defect {
    None,
    /// `c * exp(1 - 1/(1 - s^2))`, `s = |y|/rho`.
    Bump { c: f64, rho: f64 },
    /// `c * (1+|y|)^(-p)` with `p = (d/r)(1+eta)`.
    Algebraic { c: f64, power: f64 },
    /// `c (1+|z|)^(-1/r) (1 + log(1+|z|)^(1+delta))^(-1/r)`.
    SlowDecay { c: f64, r: f64, delta: f64 },
    /// `1` on the windows `[2^n, 2^n + 2^n/log(1+n)]`, `n = 1..=n_max`.
    Dyadic { n_max: u32 },
    /// Off-diagonal entry `a_12 = gamma(x_2)`.
    Transverse(DyadicGamma),
}

/// Evaluable coefficient `a = a_per + ã` with its declared metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientField {
    spec: FieldSpec,
    dim: usize,
    periodic: Periodic,
    defect: Defect,
    r: Option<f64>,
    mu: f64,
    regularity: Regularity,
    diagnostic_only: bool,
    support_radius: Option<f64>,
}

/// Builds a coefficient field from a specification.
pub fn construct_field(spec: &FieldSpec) -> Result<CoefficientField> {
    let d = spec.dim;
    if !(1..=3).contains(&d) {
        return Err(Error::param("dim", format!("{d} is not in 1..=3")));
    }
    let periodic_from = |name: &str| -> Result<Periodic> {
        match name {
            "identity" => Ok(Periodic::Identity),
            "trig" => {
                let base = spec.get("base", 2.0)?;
                let amp = spec.get("amp", 1.0)?;
                Ok(Periodic::Trig { base, amp })
            }
            "laminate" => Ok(Periodic::Laminate {
                low: spec.get("low", 1.0)?,
                high: spec.get("high", 4.0)?,
            }),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    };
    let background = spec.background.as_deref().unwrap_or("trig");
    let mut diagnostic_only = false;
    let mut support_radius = None;
    let (periodic, defect, r) = match spec.family.as_str() {
        "identity" | "trig" | "laminate" => {
            if spec.background.is_some() {
                return Err(Error::param("background", "periodic families take no background"));
            }
            (periodic_from(&spec.family)?, Defect::None, None)
        }
        "compact-defect" => {
            let c = spec.get("c", 0.5)?;
            let rho = spec.get("rho", 1.5)?;
            if rho <= 0.0 {
                return Err(Error::param("rho", "must be positive"));
            }
            support_radius = Some(rho);
            (periodic_from(background)?, Defect::Bump { c, rho }, Some(spec.get("r", 1.0)?))
        }
        "algebraic-defect" => {
            let c = spec.get("c", 0.5)?;
            let r = spec.get("r", 4.0)?;
            let eta = spec.get("eta", 0.01)?;
            if eta <= 0.0 {
                return Err(Error::param("eta", "must be positive"));
            }
            let power = d as f64 / r * (1.0 + eta);
            (periodic_from(background)?, Defect::Algebraic { c, power }, Some(r))
        }
        "slow-decay" => {
            if d != 1 {
                return Err(Error::param("dim", "slow-decay is one-dimensional"));
            }
            let r = spec.get("r", 2.0)?;
            let delta = spec.get("delta", 1.0)?;
            if delta <= 0.0 {
                return Err(Error::param("delta", "must be positive"));
            }
            let c = spec.get("c", 1.0)?;
            let bg = spec.background.as_deref().unwrap_or("identity");
            (periodic_from(bg)?, Defect::SlowDecay { c, r, delta }, Some(r))
        }
        "dyadic" => {
            if d != 1 {
                return Err(Error::param("dim", "dyadic is one-dimensional"));
            }
            let n_max = spec.get("n_max", 20.0)?;
            if n_max < 1.0 || n_max.fract() != 0.0 || n_max > 60.0 {
                return Err(Error::param("n_max", "must be an integer in 1..=60"));
            }
            diagnostic_only = true;
            (Periodic::Identity, Defect::Dyadic { n_max: n_max as u32 }, None)
        }
        "triangular" => {
            if d != 2 {
                return Err(Error::param("dim", "triangular is two-dimensional"));
            }
            let gmax = spec.get("gamma_max", 0.5)?;
            if gmax.abs() > 1.0 {
                return Err(Error::param("gamma_max", "|gamma| must not exceed 1"));
            }
            diagnostic_only = true;
            (Periodic::Identity, Defect::Transverse(DyadicGamma::new(2.0 * gmax)?), None)
        }
        other => return Err(Error::UnknownFamily(other.to_string())),
    };
    if let Some(r) = r {
        if r < 1.0 {
            return Err(Error::param("r", "must be at least 1"));
        }
    }

    let (plo, phi) = periodic.range();
    if plo <= 0.0 {
        return Err(Error::param("base", "periodic background must be positive"));
    }
    let (dlo, dhi) = match &defect {
        Defect::None => (0.0, 0.0),
        Defect::Bump { c, .. } | Defect::Algebraic { c, .. } | Defect::SlowDecay { c, .. } => {
            (c.min(0.0), c.max(0.0))
        }
        Defect::Dyadic { .. } => (0.0, 1.0),
        Defect::Transverse(_) => (0.0, 0.0),
    };
    let (lo, hi) = match &defect {
        Defect::Transverse(g) => (1.0 - 0.5 * g.sup(), 1.0 + 0.5 * g.sup()),
        _ => (plo + dlo, phi + dhi),
    };
    if lo <= 0.0 {
        return Err(Error::param("c", "defect destroys ellipticity"));
    }
    let mu = lo.min(1.0 / hi);
    let regularity = match (&defect, periodic.regularity()) {
        (Defect::Dyadic { .. }, _) => Regularity::Discontinuous,
        (_, reg) => reg,
    };
    Ok(CoefficientField {
        spec: spec.clone(),
        dim: d,
        periodic,
        defect,
        r,
        mu,
        regularity,
        diagnostic_only,
        support_radius,
    })
}

impl CoefficientField {
    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> &str {
        &self.spec.family
    }

    /// Integrability exponent of the defect, if it has one.
    pub fn r(&self) -> Option<f64> {
        self.r
    }

    /// Rate exponent `min(1, d/r)`; 1 for purely periodic fields.
    pub fn nu(&self) -> f64 {
        match self.r {
            Some(r) => (self.dim as f64 / r).min(1.0),
            None => 1.0,
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn regularity(&self) -> Regularity {
        self.regularity
    }

    pub fn is_diagnostic_only(&self) -> bool {
        self.diagnostic_only
    }

    pub fn has_defect(&self) -> bool {
        !matches!(self.defect, Defect::None)
    }

    /// Radius of the defect support when it is compact.
    /// Exponent `s` of an algebraic tail `|ã(x)| ~ |x|^(-s)`.
    pub fn defect_decay_power(&self) -> Option<f64> {
        match &self.defect {
            Defect::Algebraic { power, .. } => Some(*power),
            _ => None,
        }
    }

    pub fn support_radius(&self) -> Option<f64> {
        self.support_radius
    }

    /// True when both parts are multiples of the identity.
    pub fn is_scalar(&self) -> bool {
        !matches!(self.defect, Defect::Transverse(_))
    }

    pub fn is_symmetric(&self) -> bool {
        self.is_scalar()
    }

    pub fn periodic_is_constant(&self) -> bool {
        match self.periodic {
            Periodic::Identity => true,
            Periodic::Trig { amp, .. } => amp == 0.0,
            Periodic::Laminate { low, high } => low == high,
        }
    }

    pub fn is_discontinuous(&self) -> bool {
        self.regularity == Regularity::Discontinuous
    }

    /// Rejects fields that may not be handed to a solver.
    pub fn ensure_solvable(&self) -> Result<()> {
        if self.diagnostic_only {
            Err(Error::DiagnosticOnly(self.spec.family.clone()))
        } else {
            Ok(())
        }
    }

    pub fn gamma(&self) -> Option<&DyadicGamma> {
        match &self.defect {
            Defect::Transverse(g) => Some(g),
            _ => None,
        }
    }

    /// Dyadic windows `(start, length)` of the dyadic family.
    pub fn dyadic_windows(&self) -> Vec<(f64, f64)> {
        match self.defect {
            Defect::Dyadic { n_max } => (1..=n_max).map(dyadic_window).collect(),
            _ => Vec::new(),
        }
    }

    /// Scalar amplitude of the periodic part at `x`.
    pub fn periodic_scalar(&self, x: &[f64]) -> f64 {
        self.periodic.scalar(x)
    }

    /// Scalar amplitude of the defect (zero for the transverse family).
    pub fn defect_scalar(&self, x: &[f64]) -> f64 {
        match &self.defect {
            Defect::None | Defect::Transverse(_) => 0.0,
            Defect::Bump { c, rho } => {
                let s = norm(x) / rho;
                if s >= 1.0 {
                    0.0
                } else {
                    c * (1.0 - 1.0 / (1.0 - s * s)).exp()
                }
            }
            Defect::Algebraic { c, power } => c * (1.0 + norm(x)).powf(-power),
            Defect::SlowDecay { c, r, delta } => {
                let z = norm(x);
                let l = (1.0 + z).ln();
                c * (1.0 + z).powf(-1.0 / r) * (1.0 + l.powf(1.0 + delta)).powf(-1.0 / r)
            }
            Defect::Dyadic { n_max } => {
                let z = x[0];
                if z < 2.0 {
                    return 0.0;
                }
                let n = z.log2().floor() as i64;
                for m in [n - 1, n] {
                    if m >= 1 && m <= *n_max as i64 {
                        let (s, len) = dyadic_window(m as u32);
                        if z >= s && z <= s + len {
                            return 1.0;
                        }
                    }
                }
                0.0
            }
        }
    }

    pub fn periodic_matrix(&self, x: &[f64]) -> Mat {
        Mat::scalar(self.dim, self.periodic.scalar(x))
    }

    pub fn defect_matrix(&self, x: &[f64]) -> Mat {
        match &self.defect {
            Defect::Transverse(g) => {
                let mut m = Mat::zeros(2);
                m.set(0, 1, g.value(x[1]));
                m
            }
            _ => Mat::scalar(self.dim, self.defect_scalar(x)),
        }
    }

    /// Full coefficient `a_per(x) + ã(x)`.
    pub fn eval_matrix(&self, x: &[f64]) -> Mat {
        self.periodic_matrix(x) + self.defect_matrix(x)
    }

    /// Scalar amplitude of `a` for scalar fields.
    pub fn scalar(&self, x: &[f64]) -> f64 {
        self.periodic.scalar(x) + self.defect_scalar(x)
    }

    /// Closed-form bound `|ã(x)|` used to check tails.
    pub fn defect_tail_bound(&self, radius: f64) -> f64 {
        match &self.defect {
            Defect::Algebraic { c, power } => c.abs() * (1.0 + radius).powf(-power),
            Defect::Bump { c, rho } => {
                if radius >= *rho {
                    0.0
                } else {
                    c.abs()
                }
            }
            Defect::SlowDecay { c, r, .. } => c.abs() * (1.0 + radius).powf(-1.0 / r),
            Defect::None => 0.0,
            Defect::Dyadic { .. } | Defect::Transverse(_) => f64::INFINITY,
        }
    }
}

fn dyadic_window(n: u32) -> (f64, f64) {
    let s = 2f64.powi(n as i32);
    (s, s / (1.0 + n as f64).ln())
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Matrix-valued evaluation of a field at a point; used by point samplers.
pub fn eval_matrix(field: &CoefficientField, x: &[f64]) -> Mat {
    field.eval_matrix(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_field() {
        let f = construct_field(&FieldSpec::new("identity", 2)).unwrap();
        assert_eq!(f.eval_matrix(&[0.3, 0.7]), Mat::identity(2));
        assert_eq!(f.mu(), 1.0);
        assert!(!f.has_defect());
    }

    #[test]
    fn laminate_piecewise_values() {
        let f = construct_field(&FieldSpec::new("laminate", 2)).unwrap();
        assert_eq!(f.eval_matrix(&[0.25, 0.9]), Mat::identity(2));
        assert_eq!(f.eval_matrix(&[0.75, 0.1]), Mat::scalar(2, 4.0));
        assert_eq!(f.mu(), 0.25);
        assert!(f.is_discontinuous());
    }

    #[test]
    fn dyadic_values() {
        let f = construct_field(&FieldSpec::new("dyadic", 1)).unwrap();
        assert!(f.is_diagnostic_only());
        let (s, len) = dyadic_window(10);
        assert_eq!(f.scalar(&[s + 0.5 * len]), 2.0);
        assert_eq!(f.scalar(&[s + 1.01 * len]), 1.0);
        assert_eq!(f.scalar(&[1.5]), 1.0);
        assert!(f.ensure_solvable().is_err());
    }

    #[test]
    fn unknown_family_and_bad_gamma() {
        assert!(matches!(
            construct_field(&FieldSpec::new("granite", 2)),
            Err(Error::UnknownFamily(_))
        ));
        assert!(construct_field(&FieldSpec::new("triangular", 2).with("gamma_max", 1.2)).is_err());
        assert!(construct_field(&FieldSpec::new("trig", 1).with("base", 0.5)).is_err());
    }

    #[test]
    fn algebraic_tail_matches_closed_form() {
        let f = construct_field(
            &FieldSpec::new("algebraic-defect", 2).with("r", 4.0).on("identity"),
        )
        .unwrap();
        let x = [1e3 * 0.6, 1e3 * 0.8];
        let dev = (f.eval_matrix(&x) - f.periodic_matrix(&x)).frobenius() / 2f64.sqrt();
        assert!(dev <= f.defect_tail_bound(1e3) * (1.0 + 1e-12));
        assert_eq!(f.nu(), 0.5);
    }

    #[test]
    fn gamma_profile_is_mollified_blocks() {
        let f = construct_field(&FieldSpec::new("triangular", 2)).unwrap();
        let g = f.gamma().unwrap();
        assert!((g.value(3.0) - 0.5).abs() < 1e-12);
        assert!(g.value(6.0).abs() < 1e-12);
        assert!(g.value(2.0) > 0.2 && g.value(2.0) < 0.3);
        assert!((quadrature::integrate(|t| g.chi(t), -1.0, 1.0).unwrap() - 1.0).abs() < 1e-12);
        // primitive over a full block plus smoothing margin
        let p = g.primitive(5.0) - g.primitive(1.0);
        assert!((p - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn periodic_parts_are_periodic(x in -5.0f64..5.0, y in -5.0f64..5.0, k in 0usize..2) {
            for fam in ["trig", "laminate"] {
                let f = construct_field(&FieldSpec::new(fam, 2)).unwrap();
                let mut xs = [x, y];
                let a = f.periodic_matrix(&xs);
                xs[k] += 1.0;
                let b = f.periodic_matrix(&xs);
                prop_assert!((a - b).frobenius() < 1e-12);
            }
        }

        #[test]
        fn evaluation_is_pure(x in -3.0f64..3.0, y in -3.0f64..3.0) {
            let f = construct_field(&FieldSpec::new("compact-defect", 2)).unwrap();
            prop_assert_eq!(f.eval_matrix(&[x, y]), f.eval_matrix(&[x, y]));
        }
    }
}
