use super::CoefficientField;
use crate::error::{Error, Result};
use crate::quadrature::{self, QuadOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Where to sample a coefficient: a unit-cell lattice, a lattice over a box
/// around the defect, and seeded random points in that box.
#[derive(Clone, Debug)]
pub struct SamplePlan {
    pub cell_points: usize,
    pub box_half_width: f64,
    pub box_points: usize,
    pub random_points: usize,
    pub seed: u64,
}

impl Default for SamplePlan {
    fn default() -> Self {
        SamplePlan {
            cell_points: 32,
            box_half_width: 8.0,
            box_points: 64,
            random_points: 2000,
            seed: 0,
        }
    }
}

impl SamplePlan {
    /// All sample points of the plan in dimension `d`.
    pub fn points(&self, d: usize) -> Vec<Vec<f64>> {
        let mut pts = Vec::new();
        lattice(d, self.cell_points, 0.0, 1.0, &mut pts);
        lattice(d, self.box_points, -self.box_half_width, self.box_half_width, &mut pts);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        for _ in 0..self.random_points {
            pts.push(
                (0..d)
                    .map(|_| rng.random_range(-self.box_half_width..self.box_half_width))
                    .collect(),
            );
        }
        pts
    }
}

fn lattice(d: usize, n: usize, lo: f64, hi: f64, out: &mut Vec<Vec<f64>>) {
    if n == 0 {
        return;
    }
    let total = n.pow(d as u32);
    let step = (hi - lo) / n as f64;
    for lin in 0..total {
        let mut rem = lin;
        let mut x = Vec::with_capacity(d);
        for _ in 0..d {
            x.push(lo + (rem % n) as f64 * step + 0.5 * step);
            rem /= n;
        }
        out.push(x);
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EllipticityReport {
    pub declared_mu: f64,
    /// Smallest symmetric-part eigenvalue over the samples.
    pub mu_measured: f64,
    /// Largest symmetric-part eigenvalue over the samples.
    pub max_eigenvalue: f64,
    pub samples: usize,
    pub pass: bool,
}

/// Samples the symmetric-part spectrum of `a` and compares with the declared `mu`.
pub fn verify_ellipticity(field: &CoefficientField, plan: &SamplePlan) -> EllipticityReport {
    let pts = plan.points(field.dim());
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for x in &pts {
        let (l, h) = field.eval_matrix(x).sym_eigen_bounds();
        lo = lo.min(l);
        hi = hi.max(h);
    }
    let mu = field.mu();
    let slack = 1e-12;
    EllipticityReport {
        declared_mu: mu,
        mu_measured: lo,
        max_eigenvalue: hi,
        samples: pts.len(),
        pass: lo >= mu * (1.0 - slack) && hi <= (1.0 + slack) / mu,
    }
}

/// Sampled Hölder quotient per separation scale.
///
/// For each `s`, pairs `(x, x + s u)` are formed from lattice and seeded random
/// base points in the box `[lower, upper]` and directions `u` along the axes and
/// diagonals; the maximum of `|v(x) - v(y)| / |x - y|^beta` is returned.
/// Pairs leaving the domain of `v` (where it returns `None`) are skipped.
/// `beta = 0` gives the raw increments.
pub fn holder_growth_sample(
    v: impl Fn(&[f64]) -> Option<f64>,
    lower: &[f64],
    upper: &[f64],
    beta: f64,
    scales: &[f64],
    base_points: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::param("beta", "must lie in [0, 1]"));
    }
    if scales.is_empty() || scales.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Empty("separation scales must be positive and non-empty".into()));
    }
    let d = lower.len();
    let mut dirs: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    if d >= 2 {
        let c = 1.0 / (d as f64).sqrt();
        dirs.push(vec![c; d]);
        let mut alt = vec![c; d];
        alt[1] = -c;
        dirs.push(alt);
    }
    let per_axis = ((base_points as f64).powf(1.0 / d as f64).ceil() as usize).max(2);
    let mut bases = Vec::new();
    let total = per_axis.pow(d as u32);
    for lin in 0..total {
        let mut rem = lin;
        let mut x = Vec::with_capacity(d);
        for a in 0..d {
            let t = (rem % per_axis) as f64 / (per_axis - 1) as f64;
            x.push(lower[a] + t * (upper[a] - lower[a]));
            rem /= per_axis;
        }
        bases.push(x);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..base_points {
        bases.push((0..d).map(|a| rng.random_range(lower[a]..=upper[a])).collect());
    }
    let mut out = Vec::with_capacity(scales.len());
    let mut y = vec![0.0; d];
    for &s in scales {
        let mut best: Option<f64> = None;
        for x in &bases {
            let Some(vx) = v(x) else { continue };
            for u in &dirs {
                for (a, yi) in y.iter_mut().enumerate() {
                    *yi = x[a] + s * u[a];
                }
                if y.iter().enumerate().any(|(a, yi)| *yi < lower[a] || *yi > upper[a]) {
                    continue;
                }
                if let Some(vy) = v(&y) {
                    let q = (vx - vy).abs() / s.powf(beta);
                    best = Some(best.map_or(q, |b: f64| b.max(q)));
                }
            }
        }
        out.push(best.ok_or_else(|| Error::Empty(format!("no admissible pairs at scale {s}")))?);
    }
    Ok(out)
}

fn nested(
    f: &dyn Fn(&[f64]) -> f64,
    d: usize,
    lo: f64,
    hi: f64,
    prefix: &mut Vec<f64>,
) -> Result<f64> {
    let opts = QuadOptions {
        abs_tol: 1e-11,
        rel_tol: 1e-9,
        max_intervals: 4000,
    };
    let mut err = None;
    let r = quadrature::integrate_with(
        |t| {
            prefix.push(t);
            let v = if prefix.len() == d {
                f(prefix)
            } else {
                match nested(f, d, lo, hi, &mut prefix.clone()) {
                    Ok(v) => v,
                    Err(e) => {
                        err = Some(e);
                        0.0
                    }
                }
            };
            prefix.pop();
            v
        },
        lo,
        hi,
        &[0.0],
        opts,
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(r.value),
    }
}

/// `int |ã|^r` over the box `[-half, half]^d` by nested adaptive quadrature.
pub fn defect_box_mass(field: &CoefficientField, r: f64, half: f64) -> Result<f64> {
    let d = field.dim();
    let f = |x: &[f64]| field.defect_scalar(x).abs().powf(r);
    nested(&f, d, -half, half, &mut Vec::with_capacity(d))
}

/// `int |ã|^r` over the annulus `2^k <= |x| < 2^(k+1)` for radial defects.
pub fn defect_annulus_mass(field: &CoefficientField, r: f64, k: i32) -> Result<f64> {
    let d = field.dim();
    let sphere = match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI,
    };
    let mut x = vec![0.0; d];
    let v = quadrature::integrate(
        |rho| {
            x[0] = rho;
            rho.powi(d as i32 - 1) * field.defect_scalar(&x).abs().powf(r)
        },
        2f64.powi(k),
        2f64.powi(k + 1),
    )?;
    Ok(sphere * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{construct_field, FieldSpec};

    #[test]
    fn ellipticity_of_builtin_families() {
        let plan = SamplePlan {
            random_points: 300,
            ..SamplePlan::default()
        };
        for spec in [
            FieldSpec::new("identity", 2),
            FieldSpec::new("trig", 2),
            FieldSpec::new("laminate", 2),
            FieldSpec::new("compact-defect", 2),
            FieldSpec::new("algebraic-defect", 2),
            FieldSpec::new("slow-decay", 1),
            FieldSpec::new("triangular", 2),
        ] {
            let f = construct_field(&spec).unwrap();
            let rep = verify_ellipticity(&f, &plan);
            assert!(rep.pass, "{}: {rep:?}", spec.family);
        }
    }

    #[test]
    fn laminate_spectrum() {
        let f = construct_field(&FieldSpec::new("laminate", 2)).unwrap();
        let rep = verify_ellipticity(&f, &SamplePlan::default());
        assert_eq!(rep.mu_measured, 1.0);
        assert_eq!(rep.max_eigenvalue, 4.0);
        assert_eq!(rep.declared_mu, 0.25);
    }

    #[test]
    fn triangular_symmetric_part_bounded_below_by_half() {
        let f = construct_field(&FieldSpec::new("triangular", 2).with("gamma_max", 1.0)).unwrap();
        let plan = SamplePlan {
            box_half_width: 40.0,
            random_points: 500,
            ..SamplePlan::default()
        };
        let rep = verify_ellipticity(&f, &plan);
        assert!(rep.mu_measured >= 0.5 - 1e-12);
        assert!(rep.pass);
    }

    #[test]
    fn holder_quotients() {
        let c = holder_growth_sample(|_| Some(3.0), &[0.0, 0.0], &[1.0, 1.0], 0.5, &[0.1, 0.2], 100, 1).unwrap();
        assert!(c.iter().all(|v| *v == 0.0));
        let l = holder_growth_sample(|x| Some(x[0]), &[0.0, 0.0], &[1.0, 1.0], 1.0, &[0.05, 0.3], 200, 1).unwrap();
        assert!(l.iter().all(|v| (v - 1.0).abs() < 0.05));
        assert!(holder_growth_sample(|x| Some(x[0]), &[0.0], &[1.0], 1.5, &[0.1], 10, 0).is_err());
    }

    #[test]
    fn dyadic_is_not_holder() {
        let f = construct_field(&FieldSpec::new("dyadic", 1)).unwrap();
        let scales = [1e-1, 1e-2, 1e-3];
        let q = holder_growth_sample(|x| Some(f.scalar(x)), &[7.0], &[9.0], 0.5, &scales, 20_000, 3).unwrap();
        assert!(q.windows(2).all(|w| w[1] > w[0]));
        assert!(q[2] > 30.0);
    }

    #[test]
    fn algebraic_mass_converges_and_annuli_decay() {
        let f = construct_field(
            &FieldSpec::new("algebraic-defect", 2).with("r", 4.0).with("c", 0.5).on("identity"),
        )
        .unwrap();
        // |ã|^4 |x| ~ |x|^(-1 - 2 eta) far out: annulus ratio tends to 2^(-2 eta)
        let masses: Vec<f64> = (7..20).map(|k| defect_annulus_mass(&f, 4.0, k).unwrap()).collect();
        for w in masses.windows(2) {
            assert!(w[1] < w[0]);
        }
        let ratio = masses[12] / masses[11];
        assert!((ratio - 2f64.powf(-0.02)).abs() < 2e-3, "{ratio}");
        // box masses increase with contracting dyadic increments
        let boxes: Vec<f64> = (8..12)
            .map(|k| defect_box_mass(&f, 4.0, 2f64.powi(k)).unwrap())
            .collect();
        let inc: Vec<f64> = boxes.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(inc.iter().all(|v| *v > 0.0));
        assert!(inc.windows(2).all(|w| w[1] < w[0]), "{inc:?}");
    }
}
