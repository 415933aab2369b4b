//! Dirichlet problems `-div(a grad u) = f` on boxes for the oscillatory
//! coefficient `a(x/ε)` and for a constant homogenized matrix, plus discrete
//! Green functions.

use crate::error::{Error, Result};
use crate::fields::{CoefficientField, Grid, GridField, Mat};
use crate::fv::{self, Boundary, FaceAveraging, FaceCoefficients, FaceVectors};
use crate::linalg::{self, tridiag, Csr, SolveStats, SolverOptions};

/// Minimum number of fine cells per period `ε`.
pub const MIN_CELLS_PER_PERIOD: usize = 8;

/// Coefficient of a Dirichlet problem.
#[derive(Clone, Copy, Debug)]
pub enum Coefficient<'a> {
    /// `a(x/ε)`.
    Oscillatory { field: &'a CoefficientField, eps: f64 },
    /// Constant matrix, e.g. `a*`.
    Constant(Mat),
}

impl Coefficient<'_> {
    /// Face coefficients on `grid`, after the resolution guard.
    pub fn faces(&self, grid: &Grid, averaging: FaceAveraging) -> Result<FaceCoefficients> {
        match *self {
            Coefficient::Constant(m) => {
                if m.dim() != grid.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: grid.dim(),
                        got: m.dim(),
                    });
                }
                Ok(FaceCoefficients::constant(grid, &m))
            }
            Coefficient::Oscillatory { field, eps } => {
                field.ensure_solvable()?;
                if field.dim() != grid.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: grid.dim(),
                        got: field.dim(),
                    });
                }
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(Error::param("eps", "must lie in (0, 1)"));
                }
                let cpp = eps / grid.spacing();
                if cpp < MIN_CELLS_PER_PERIOD as f64 - 1e-9 {
                    return Err(Error::UnderResolved {
                        cells_per_period: cpp,
                        required: MIN_CELLS_PER_PERIOD,
                    });
                }
                let avg = averaging.resolve(field.is_discontinuous());
                let inv = 1.0 / eps;
                Ok(FaceCoefficients::sample(grid, avg, move |x| {
                    let mut y = [0.0; 3];
                    for (a, v) in x.iter().enumerate() {
                        y[a] = v * inv;
                    }
                    field.eval_matrix(&y[..x.len()])
                }))
            }
        }
    }
}

/// `-div(a grad u) = f` in the box `grid`, `u = g` on its boundary.
pub struct DirichletProblem<'a> {
    pub grid: Grid,
    pub coefficient: Coefficient<'a>,
    /// Cell values of `f`.
    pub rhs: Vec<f64>,
    /// Boundary data; `None` means homogeneous.
    pub boundary: Boundary<'a>,
    pub averaging: FaceAveraging,
}

impl<'a> DirichletProblem<'a> {
    pub fn new(grid: Grid, coefficient: Coefficient<'a>, rhs: Vec<f64>) -> Self {
        DirichletProblem {
            grid,
            coefficient,
            rhs,
            boundary: None,
            averaging: FaceAveraging::Auto,
        }
    }

    /// Samples `f` at the cell centers.
    pub fn with_source(grid: Grid, coefficient: Coefficient<'a>, f: impl Fn(&[f64]) -> f64) -> Self {
        let rhs = grid.centers().map(|x| f(&x)).collect();
        Self::new(grid, coefficient, rhs)
    }

    pub fn with_boundary(mut self, g: &'a (dyn Fn(&[f64]) -> f64 + Sync)) -> Self {
        self.boundary = Some(g);
        self
    }
}

/// Discrete solution with its face gradients.
#[derive(Clone, Debug)]
pub struct DirichletSolution {
    pub u: GridField,
    pub face_grad: FaceVectors,
    pub coeffs: FaceCoefficients,
    /// `None` for direct (tridiagonal) solves.
    pub stats: Option<SolveStats>,
}

impl DirichletSolution {
    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    /// Cell-centered gradient: centered differences inside, one-sided at the
    /// boundary.
    pub fn cell_gradient(&self) -> Result<GridField> {
        self.u.gradient()
    }
}

fn solve_system(a: &Csr, rhs: &[f64], shape: &[usize], solver: &SolverOptions) -> Result<(Vec<f64>, Option<SolveStats>)> {
    if shape.len() == 1 {
        let n = a.n();
        let (mut lo, mut di, mut up) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (c, v) in cols.iter().zip(vals) {
                if *c == i {
                    di[i] += v;
                } else if *c + 1 == i {
                    lo[i] += v;
                } else if *c == i + 1 {
                    up[i] += v;
                } else {
                    return Err(Error::Unsupported("1D operator is not tridiagonal".into()));
                }
            }
        }
        return Ok((tridiag::solve(&lo, &di, &up, rhs)?, None));
    }
    let mut x = vec![0.0; rhs.len()];
    let stats = linalg::solve(a, rhs, &mut x, shape, false, solver)?;
    Ok((x, Some(stats)))
}

/// Solves the Dirichlet problem. One-dimensional problems use a direct
/// tridiagonal solve.
pub fn solve_dirichlet(problem: &DirichletProblem, solver: &SolverOptions) -> Result<DirichletSolution> {
    let grid = &problem.grid;
    if grid.is_periodic() {
        return Err(Error::InvalidGrid("Dirichlet problems need a box grid".into()));
    }
    if problem.rhs.len() != grid.len() {
        return Err(Error::DimensionMismatch {
            expected: grid.len(),
            got: problem.rhs.len(),
        });
    }
    let coeffs = problem.coefficient.faces(grid, problem.averaging)?;
    if grid.dim() == 1 {
        return solve_flux_form(problem, coeffs);
    }
    let a = fv::assemble(&coeffs);
    let mut rhs = problem.rhs.clone();
    if problem.boundary.is_some() {
        let extra = fv::affine_rhs(&coeffs, problem.boundary, None)?;
        rhs.iter_mut().zip(&extra).for_each(|(r, e)| *r += e);
    }
    let (u, stats) = if rhs.iter().all(|v| *v == 0.0) {
        (vec![0.0; grid.len()], None)
    } else {
        solve_system(&a, &rhs, grid.shape(), solver)?
    };
    let face_grad = fv::face_gradient(grid, &u, problem.boundary);
    Ok(DirichletSolution {
        u: GridField::scalar(grid.clone(), u)?,
        face_grad,
        coeffs,
        stats,
    })
}

/// One-dimensional Dirichlet problem through its face fluxes.
///
/// The cell balances fix `F_m = F_0 - h Σ_{c<m} f_c`; `F_0` follows from
/// `Σ_m (h_m / a_m) F_m = g(1) - g(0)` with half weights on the two boundary
/// faces. This is the same discrete system as the assembled one, but the
/// face gradients `F_m / a_m` carry no differencing cancellation.
fn solve_flux_form(problem: &DirichletProblem, coeffs: FaceCoefficients) -> Result<DirichletSolution> {
    let grid = &problem.grid;
    let n = grid.len();
    let h = grid.spacing();
    let (gl, gr) = match problem.boundary {
        Some(g) => (g(&[grid.lower()[0]]), g(&[grid.upper()[0]])),
        None => (0.0, 0.0),
    };
    let a: Vec<f64> = (0..=n).map(|m| coeffs.get(0, 0, m)).collect();
    let weight = |m: usize| if m == 0 || m == n { 0.5 * h / a[m] } else { h / a[m] };
    let mut s = vec![0.0; n + 1];
    for c in 0..n {
        s[c + 1] = s[c] + h * problem.rhs[c];
    }
    let wsum: f64 = (0..=n).map(weight).sum();
    let ws: f64 = (0..=n).map(|m| weight(m) * s[m]).sum();
    let f0 = (gr - gl + ws) / wsum;
    let mut fg = FaceVectors::zeros(grid);
    let mut u = vec![0.0; n];
    let mut acc = gl;
    for m in 0..=n {
        let g = (f0 - s[m]) / a[m];
        fg.data[0][m] = g;
        if m < n {
            acc += if m == 0 { 0.5 * h * g } else { h * g };
            u[m] = acc;
        }
    }
    Ok(DirichletSolution {
        u: GridField::scalar(grid.clone(), u)?,
        face_grad: fg,
        coeffs,
        stats: None,
    })
}

/// Discrete Green function `G(., y)` for a cell-center source `y`.
#[derive(Clone, Debug)]
pub struct GreenSample {
    pub source: Vec<f64>,
    pub source_cell: usize,
    /// True for the Green function of the transposed operator.
    pub transpose: bool,
    pub g: GridField,
    pub gradient: GridField,
    pub stats: Option<SolveStats>,
}

impl GreenSample {
    /// `G(x, y)` at cell centers (multilinear at other points).
    pub fn at(&self, x: &[f64]) -> Option<f64> {
        self.g.interpolate(0, x)
    }
}

/// Solves `A G = h^{-d} δ_y` with homogeneous Dirichlet data (`A^T` when
/// `transpose`).
pub fn discrete_green(
    grid: &Grid,
    coefficient: Coefficient,
    y: &[f64],
    transpose: bool,
    solver: &SolverOptions,
) -> Result<GreenSample> {
    let d = grid.dim();
    if y.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: y.len() });
    }
    let h = grid.spacing();
    let mut idx = vec![0usize; d];
    for a in 0..d {
        let s = (y[a] - grid.lower()[a]) / h - 0.5;
        let r = s.round();
        if (s - r).abs() > 1e-6 || r < 1.0 || r > (grid.shape()[a] - 2) as f64 {
            return Err(Error::param("source", "must be an interior cell center"));
        }
        idx[a] = r as usize;
    }
    let cell = grid.linear(&idx);
    let coeffs = coefficient.faces(grid, FaceAveraging::Auto)?;
    let mut a = fv::assemble(&coeffs);
    if transpose {
        a = a.transpose();
    }
    let mut rhs = vec![0.0; grid.len()];
    rhs[cell] = 1.0 / grid.cell_volume();
    let (g, stats) = solve_system(&a, &rhs, grid.shape(), solver)?;
    let g = GridField::scalar(grid.clone(), g)?;
    let gradient = g.gradient()?;
    Ok(GreenSample {
        source: grid.center(cell),
        source_cell: cell,
        transpose,
        g,
        gradient,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{construct_field, FieldSpec};
    use std::f64::consts::PI;

    fn solver() -> SolverOptions {
        SolverOptions {
            tol: 1e-12,
            ..Default::default()
        }
    }

    #[test]
    fn zero_source_gives_zero() {
        let g = Grid::box_with_spacing(&[0.0, 0.0], &[1.0, 1.0], 1.0 / 16.0).unwrap();
        let p = DirichletProblem::new(g.clone(), Coefficient::Constant(Mat::identity(2)), vec![0.0; g.len()]);
        let s = solve_dirichlet(&p, &solver()).unwrap();
        assert_eq!(s.u.max_abs(), 0.0);
    }

    #[test]
    fn manufactured_solution_converges_second_order() {
        let exact = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
        let mut errs = Vec::new();
        for n in [16usize, 32, 64] {
            let g = Grid::box_with_spacing(&[0.0, 0.0], &[1.0, 1.0], 1.0 / n as f64).unwrap();
            let p = DirichletProblem::with_source(g.clone(), Coefficient::Constant(Mat::identity(2)), |x| {
                2.0 * PI * PI * exact(x)
            });
            let s = solve_dirichlet(&p, &solver()).unwrap();
            let e: f64 = g
                .centers()
                .zip(s.u.values())
                .map(|(x, u)| (u - exact(&x)).powi(2))
                .sum::<f64>()
                * g.cell_volume();
            errs.push(e.sqrt());
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.9, "{errs:?}");
        }
    }

    #[test]
    fn one_dimensional_flux_is_exact() {
        // u' = -x / (1 + ã(x/ε)) on (-1, 1) with f = 1
        let f = construct_field(&FieldSpec::new("slow-decay", 1).with("r", 2.0)).unwrap();
        let eps = 1.0 / 16.0;
        let g = Grid::centered_box(1, 1.0, eps / 64.0).unwrap();
        let p = DirichletProblem::with_source(g.clone(), Coefficient::Oscillatory { field: &f, eps }, |_| 1.0);
        let s = solve_dirichlet(&p, &solver()).unwrap();
        let n = g.len();
        for face in [0, n / 4, n / 2, 3 * n / 4, n] {
            let x = -1.0 + face as f64 * g.spacing();
            let a = s.coeffs.get(0, 0, face);
            let want = -x / a;
            assert!((s.face_grad.get(0, 0, face) - want).abs() < 1e-9, "{face}");
        }
    }

    #[test]
    fn flux_form_matches_assembled_system() {
        let f = construct_field(&FieldSpec::new("trig", 1)).unwrap();
        let g = Grid::centered_box(1, 1.0, 1.0 / 64.0).unwrap();
        let bc = |x: &[f64]| 1.0 + 0.5 * x[0];
        let p = DirichletProblem::with_source(g.clone(), Coefficient::Oscillatory { field: &f, eps: 0.25 }, |x| x[0].cos())
            .with_boundary(&bc);
        let s = solve_dirichlet(&p, &solver()).unwrap();
        let a = fv::assemble(&s.coeffs);
        let mut rhs = p.rhs.clone();
        let extra = fv::affine_rhs(&s.coeffs, Some(&bc), None).unwrap();
        rhs.iter_mut().zip(&extra).for_each(|(r, e)| *r += e);
        let (u, _) = solve_system(&a, &rhs, g.shape(), &solver()).unwrap();
        let du = u.iter().zip(s.u.values()).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(du < 1e-12, "{du}");
        let fg = fv::face_gradient(&g, &u, Some(&bc));
        for m in 0..=g.len() {
            assert!((fg.get(0, 0, m) - s.face_grad.get(0, 0, m)).abs() < 1e-9);
        }
    }

    #[test]
    fn resolution_guard() {
        let f = construct_field(&FieldSpec::new("trig", 2)).unwrap();
        let g = Grid::centered_box(2, 1.0, 1.0 / 16.0).unwrap();
        let p = DirichletProblem::new(g.clone(), Coefficient::Oscillatory { field: &f, eps: 0.5 }, vec![1.0; g.len()]);
        assert!(solve_dirichlet(&p, &solver()).is_ok());
        let p = DirichletProblem::new(g.clone(), Coefficient::Oscillatory { field: &f, eps: 0.25 }, vec![1.0; g.len()]);
        assert!(matches!(solve_dirichlet(&p, &solver()), Err(Error::UnderResolved { .. })));
    }

    #[test]
    fn linearity_in_the_source() {
        let f = construct_field(&FieldSpec::new("compact-defect", 2)).unwrap();
        let g = Grid::centered_box(2, 1.0, 1.0 / 32.0).unwrap();
        let c = Coefficient::Oscillatory { field: &f, eps: 0.25 };
        let f1: Vec<f64> = (0..g.len()).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let f2: Vec<f64> = (0..g.len()).map(|i| ((i * 104729) % 97) as f64 / 97.0 - 0.5).collect();
        let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| 2.0 * a - 3.0 * b).collect();
        let u1 = solve_dirichlet(&DirichletProblem::new(g.clone(), c, f1), &solver()).unwrap();
        let u2 = solve_dirichlet(&DirichletProblem::new(g.clone(), c, f2), &solver()).unwrap();
        let us = solve_dirichlet(&DirichletProblem::new(g.clone(), c, sum), &solver()).unwrap();
        let scale = us.u.max_abs();
        for i in 0..g.len() {
            let lin = 2.0 * u1.u.values()[i] - 3.0 * u2.u.values()[i];
            assert!((us.u.values()[i] - lin).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn maximum_principle_for_nonnegative_source() {
        let f = construct_field(&FieldSpec::new("laminate", 2)).unwrap();
        let g = Grid::centered_box(2, 1.0, 1.0 / 32.0).unwrap();
        let p = DirichletProblem::with_source(g, Coefficient::Oscillatory { field: &f, eps: 0.25 }, |x| {
            if x[0] > 0.0 { 1.0 } else { 0.0 }
        });
        let s = solve_dirichlet(&p, &solver()).unwrap();
        assert!(s.u.values().iter().all(|v| *v >= -1e-12));
    }

    #[test]
    fn green_positivity_and_reciprocity() {
        let f = construct_field(&FieldSpec::new("compact-defect", 2)).unwrap();
        let g = Grid::centered_box(2, 1.0, 1.0 / 32.0).unwrap();
        let c = Coefficient::Oscillatory { field: &f, eps: 0.25 };
        let h = g.spacing();
        let x = [-0.5 + 0.5 * h, 0.25 + 0.5 * h];
        let y = [0.125 + 0.5 * h, -0.375 + 0.5 * h];
        let gx = discrete_green(&g, c, &x, false, &solver()).unwrap();
        let gy = discrete_green(&g, c, &y, false, &solver()).unwrap();
        assert!(gx.g.values().iter().all(|v| *v >= -1e-12));
        let a = gx.at(&y).unwrap();
        let b = gy.at(&x).unwrap();
        assert!((a - b).abs() < 1e-8 * a.abs(), "{a} vs {b}");
        assert!(discrete_green(&g, c, &[0.01, 0.0], false, &solver()).is_err());
    }

    #[test]
    fn transpose_reciprocity_for_nonsymmetric_matrix() {
        let m = Mat::from_rows(&[&[1.0, 0.4], &[-0.2, 1.5]]);
        let g = Grid::centered_box(2, 1.0, 1.0 / 24.0).unwrap();
        let h = g.spacing();
        let x = [-0.25 - 0.5 * h, 0.25 + 0.5 * h];
        let y = [0.5 + 0.5 * h, -0.125 - 0.5 * h];
        let c = Coefficient::Constant(m);
        let gx = discrete_green(&g, c, &x, false, &solver()).unwrap();
        let gty = discrete_green(&g, c, &y, true, &solver()).unwrap();
        let a = gx.at(&y).unwrap();
        let b = gty.at(&x).unwrap();
        assert!((a - b).abs() < 1e-8 * a.abs(), "{a} vs {b}");
    }
}
