//! Periodic cell problems: correctors `w_per`, the homogenized tensor `a*`,
//! and the skew-symmetric flux potential `B_per` on the unit torus.

use crate::error::{Error, Result};
use crate::fft;
use crate::fields::{CoefficientField, Components, Grid, GridField, Mat};
use crate::fv::{self, FaceAveraging, FaceCoefficients, FaceScalars, FaceVectors};
use crate::linalg::{self, SolveStats, SolverOptions};
use serde::Serialize;

/// Discrete periodic corrector for one direction `p`.
#[derive(Clone, Debug)]
pub struct PeriodicCorrector {
    pub p: Vec<f64>,
    /// Zero-mean cell values.
    pub w: GridField,
    /// Face gradients `G w` on the torus faces.
    pub face_grad: FaceVectors,
    /// Normal fluxes `a (p + G w)` on the faces.
    pub flux: FaceScalars,
    pub stats: SolveStats,
}

impl PeriodicCorrector {
    pub fn grid(&self) -> &Grid {
        self.w.grid()
    }

    /// Cell-centered gradient: average of the normal differences on the two faces.
    pub fn cell_gradient(&self) -> GridField {
        cell_gradient_from_faces(self.grid(), &self.face_grad)
    }
}

pub(crate) fn cell_gradient_from_faces(grid: &Grid, fg: &FaceVectors) -> GridField {
    let d = grid.dim();
    let n = grid.len();
    let mut out = vec![0.0; d * n];
    let mut idx = [0usize; 3];
    for c in 0..n {
        grid.multi_index(c, &mut idx[..d]);
        for i in 0..d {
            let (fl, fu) = fv::cell_faces(grid, i, &idx[..d]);
            out[i * n + c] = 0.5 * (fg.get(i, i, fl) + fg.get(i, i, fu));
        }
    }
    GridField::new(grid.clone(), Components::Vector, out).expect("finite gradient")
}

/// Face coefficients of the periodic part on a grid aligned with the lattice.
pub fn periodic_face_coefficients(
    field: &CoefficientField,
    grid: &Grid,
    averaging: FaceAveraging,
) -> FaceCoefficients {
    let avg = averaging.resolve(field.is_discontinuous());
    FaceCoefficients::sample(grid, avg, |x| field.periodic_matrix(x))
}

/// Solves `-div(a_per (p + grad w)) = 0` on the torus `grid`.
pub fn solve_periodic_corrector_p(
    field: &CoefficientField,
    coeffs: &FaceCoefficients,
    p: &[f64],
    solver: &SolverOptions,
) -> Result<PeriodicCorrector> {
    field.ensure_solvable()?;
    let grid = coeffs.grid();
    if !grid.is_periodic() {
        return Err(Error::InvalidGrid("periodic corrector needs a torus grid".into()));
    }
    if p.len() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: p.len(),
        });
    }
    let (w, stats) = if grid.dim() == 1 {
        (flux_form_1d(coeffs, p[0]), SolveStats { iterations: 0, residual: 0.0 })
    } else {
        let a = fv::assemble(coeffs);
        let rhs = fv::affine_rhs(coeffs, None, Some(p))?;
        let mut w = vec![0.0; grid.len()];
        let stats = linalg::solve(&a, &rhs, &mut w, grid.shape(), true, solver)?;
        (w, stats)
    };
    let face_grad = fv::face_gradient(grid, &w, None);
    let flux = coeffs.flux(Some(&face_grad), Some(p));
    Ok(PeriodicCorrector {
        p: p.to_vec(),
        w: GridField::scalar(grid.clone(), w)?,
        face_grad,
        flux,
        stats,
    })
}

/// One-dimensional torus corrector from flux constancy: `a_f (p + w′_f) = F`
/// on every face with `Σ w′_f = 0`, so `F = p / mean(1/a_f)`. Face `f` lies
/// below cell `f`; cell values are accumulated and given zero mean.
fn flux_form_1d(coeffs: &FaceCoefficients, p: f64) -> Vec<f64> {
    let grid = coeffs.grid();
    let n = grid.len();
    let h = grid.spacing();
    let a: Vec<f64> = (0..n).map(|f| coeffs.get(0, 0, f)).collect();
    let flux = p / (a.iter().map(|v| 1.0 / v).sum::<f64>() / n as f64);
    let mut w = vec![0.0; n];
    for c in 1..n {
        w[c] = w[c - 1] + h * (flux / a[c] - p);
    }
    let mean = w.iter().sum::<f64>() / n as f64;
    w.iter_mut().for_each(|v| *v -= mean);
    w
}

/// Corrector for the unit direction `e_k`.
pub fn solve_periodic_corrector(
    field: &CoefficientField,
    k: usize,
    grid: &Grid,
    averaging: FaceAveraging,
    solver: &SolverOptions,
) -> Result<PeriodicCorrector> {
    let coeffs = periodic_face_coefficients(field, grid, averaging);
    let mut p = vec![0.0; grid.dim()];
    p[k] = 1.0;
    solve_periodic_corrector_p(field, &coeffs, &p, solver)
}

/// Constant homogenized matrix with the eigenvalue bounds of its symmetric part.
#[derive(Clone, Debug, PartialEq)]
pub struct HomogenizedTensor {
    pub a_star: Mat,
    pub eig_min: f64,
    pub eig_max: f64,
}

impl HomogenizedTensor {
    pub fn new(a_star: Mat) -> Self {
        let (eig_min, eig_max) = a_star.sym_eigen_bounds();
        HomogenizedTensor {
            a_star,
            eig_min,
            eig_max,
        }
    }

    /// Checks the eigenvalue bounds against the ellipticity constant `mu`.
    pub fn is_elliptic(&self, mu: f64) -> bool {
        self.eig_min >= mu * (1.0 - 1e-9) && self.eig_max <= (1.0 + 1e-9) / mu
    }
}

/// `a*_{ik}` = cell average of the face flux `F_k^i`.
pub fn homogenized_tensor(correctors: &[PeriodicCorrector]) -> Result<HomogenizedTensor> {
    let d = correctors.len();
    let mut a = Mat::zeros(d);
    for (k, c) in correctors.iter().enumerate() {
        if c.p.iter().enumerate().any(|(j, v)| *v != if j == k { 1.0 } else { 0.0 }) {
            return Err(Error::Unsupported("correctors must be ordered e_1..e_d".into()));
        }
        for i in 0..d {
            let f = &c.flux[i];
            a.set(i, k, f.iter().sum::<f64>() / f.len() as f64);
        }
    }
    Ok(HomogenizedTensor::new(a))
}

/// Periodic flux `M` and potential `B` on the torus, stored on the staggered
/// locations where the discrete identities are exact: `M_k^i` on faces normal
/// to `i`, `B_k^{ij}` at the points shifted by `-h/2 (e_i + e_j)` from the cell
/// centers.
#[derive(Clone, Debug)]
pub struct PeriodicPotential {
    pub grid: Grid,
    /// `m[k][i]`: face array of `M_k^i`.
    pub m: Vec<Vec<Vec<f64>>>,
    /// `b[k][i * d + j]`: staggered array of `B_k^{ij}`.
    pub b: Vec<Vec<Vec<f64>>>,
}

/// Index shifted by `delta` along `axis` on a periodic layout.
#[inline]
pub(crate) fn shift(grid: &Grid, lin: usize, axis: usize, delta: i64) -> usize {
    let n = grid.shape()[axis] as i64;
    let s = grid.stride(axis);
    let i = ((lin / s) % n as usize) as i64;
    let j = (i + delta).rem_euclid(n) as usize;
    lin - i as usize * s + j * s
}

/// Solves `-Δ_h B_k^{ij} = D_j M_k^i - D_i M_k^j` spectrally on the torus.
pub fn periodic_potential(
    correctors: &[PeriodicCorrector],
    a_star: &HomogenizedTensor,
) -> Result<PeriodicPotential> {
    let d = correctors.len();
    let grid = correctors[0].grid().clone();
    let h = grid.spacing();
    let n = grid.len();
    let mut m_all = Vec::with_capacity(d);
    let mut b_all = Vec::with_capacity(d);
    for (k, c) in correctors.iter().enumerate() {
        let mk: Vec<Vec<f64>> = (0..d)
            .map(|i| c.flux[i].iter().map(|f| a_star.a_star.get(i, k) - f).collect())
            .collect();
        let scale = mk.iter().flatten().fold(1.0f64, |s, v| s.max(v.abs()));
        for mi in &mk {
            let mean = mi.iter().sum::<f64>() / n as f64;
            if mean.abs() > 1e-10 * scale {
                return Err(Error::NonzeroFluxMean(mean));
            }
        }
        let mut bk = vec![vec![0.0; n]; d * d];
        for i in 0..d {
            for j in (i + 1)..d {
                let rhs: Vec<f64> = (0..n)
                    .map(|l| {
                        let dj = (mk[i][l] - mk[i][shift(&grid, l, j, -1)]) / h;
                        let di = (mk[j][l] - mk[j][shift(&grid, l, i, -1)]) / h;
                        dj - di
                    })
                    .collect();
                let bij = fft::poisson_torus(&rhs, grid.shape(), h);
                bk[j * d + i] = bij.iter().map(|v| -v).collect();
                bk[i * d + j] = bij;
            }
        }
        m_all.push(mk);
        b_all.push(bk);
    }
    Ok(PeriodicPotential {
        grid,
        m: m_all,
        b: b_all,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PotentialIdentities {
    /// `max |B^{ij} + B^{ji}|`.
    pub skewness: f64,
    /// `max_j max |sum_i D_i B^{ij} - M^j|`.
    pub divergence: f64,
    /// `max |M|`.
    pub m_max: f64,
}

impl PeriodicPotential {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Measures the discrete identities `B^{ij} = -B^{ji}` and `div B = M`.
    pub fn identities(&self) -> PotentialIdentities {
        staggered_identities(&self.grid, &self.m, &self.b, None)
    }

    /// Cell-centered flux `M_k^i` (component `k d + i`).
    pub fn cell_flux(&self) -> GridField {
        let d = self.dim();
        let n = self.grid.len();
        let mut out = vec![0.0; d * d * n];
        for k in 0..d {
            for i in 0..d {
                let m = &self.m[k][i];
                for c in 0..n {
                    out[(k * d + i) * n + c] = 0.5 * (m[c] + m[shift(&self.grid, c, i, 1)]);
                }
            }
        }
        GridField::new(self.grid.clone(), Components::Matrix, out).expect("finite flux")
    }

    /// Cell-centered potential `B_k^{ij}` (component `(k d + i) d + j`).
    pub fn cell_potential(&self) -> GridField {
        let d = self.dim();
        let n = self.grid.len();
        let mut out = vec![0.0; d * d * d * n];
        for k in 0..d {
            for i in 0..d {
                for j in (i + 1)..d {
                    let b = &self.b[k][i * d + j];
                    for c in 0..n {
                        let ci = shift(&self.grid, c, i, 1);
                        let cj = shift(&self.grid, c, j, 1);
                        let cij = shift(&self.grid, ci, j, 1);
                        let v = 0.25 * (b[c] + b[ci] + b[cj] + b[cij]);
                        out[((k * d + i) * d + j) * n + c] = v;
                        out[((k * d + j) * d + i) * n + c] = -v;
                    }
                }
            }
        }
        GridField::new(self.grid.clone(), Components::Tensor3, out).expect("finite potential")
    }
}

/// Identities on staggered arrays; on a box (`periodic == false`), `valid`
/// restricts the divergence check to faces whose stencil stays inside.
pub(crate) fn staggered_identities(
    grid: &Grid,
    m: &[Vec<Vec<f64>>],
    b: &[Vec<Vec<f64>>],
    valid: Option<&dyn Fn(usize, usize) -> bool>,
) -> PotentialIdentities {
    let d = grid.dim();
    let h = grid.spacing();
    let n = grid.len();
    let mut skew = 0.0f64;
    let mut div = 0.0f64;
    let mut mmax = 0.0f64;
    for k in 0..m.len() {
        for i in 0..d {
            for j in 0..d {
                let (p, q) = (&b[k][i * d + j], &b[k][j * d + i]);
                for l in 0..n {
                    skew = skew.max((p[l] + q[l]).abs());
                }
            }
        }
        for j in 0..d {
            for l in 0..n {
                if let Some(v) = valid {
                    if !v(j, l) {
                        continue;
                    }
                }
                let mut s = 0.0;
                for i in 0..d {
                    if i == j {
                        continue;
                    }
                    let bij = &b[k][i * d + j];
                    s += (bij[shift(grid, l, i, 1)] - bij[l]) / h;
                }
                div = div.max((s - m[k][j][l]).abs());
                mmax = mmax.max(m[k][j][l].abs());
            }
        }
    }
    PotentialIdentities {
        skewness: skew,
        divergence: div,
        m_max: mmax,
    }
}

/// Everything computed on the unit cell for one field.
#[derive(Clone, Debug)]
pub struct PeriodicCell {
    pub coeffs: FaceCoefficients,
    pub correctors: Vec<PeriodicCorrector>,
    pub a_star: HomogenizedTensor,
    pub potential: PeriodicPotential,
}

/// Correctors for all directions, `a*` and `B_per` on the torus with `n` cells
/// per axis.
pub fn solve_cell(
    field: &CoefficientField,
    n: usize,
    averaging: FaceAveraging,
    solver: &SolverOptions,
) -> Result<PeriodicCell> {
    let d = field.dim();
    let grid = Grid::torus(d, n)?;
    let coeffs = periodic_face_coefficients(field, &grid, averaging);
    let correctors = (0..d)
        .map(|k| {
            let mut p = vec![0.0; d];
            p[k] = 1.0;
            solve_periodic_corrector_p(field, &coeffs, &p, solver)
        })
        .collect::<Result<Vec<_>>>()?;
    let a_star = homogenized_tensor(&correctors)?;
    let potential = periodic_potential(&correctors, &a_star)?;
    Ok(PeriodicCell {
        coeffs,
        correctors,
        a_star,
        potential,
    })
}
