//! Cell-centered finite-volume discretization of `-div(a grad u)` on uniform
//! grids (periodic tori or Dirichlet boxes).
//!
//! Fluxes live on faces. The normal derivative at a face is the two-point
//! difference (half-cell difference against the boundary value on Dirichlet
//! faces); transverse derivatives average the centered differences of the two
//! adjacent cells, with mirrored ghost values `2g - u` outside the box.

use crate::error::{Error, Result};
use crate::fields::{Grid, Mat};
use crate::linalg::{Csr, CsrBuilder};
use arrayvec::ArrayVec;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How face coefficients are obtained from the field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FaceAveraging {
    /// Harmonic for discontinuous fields, midpoint otherwise.
    #[default]
    Auto,
    /// Sample `a` at the face center.
    Midpoint,
    /// Harmonic mean of the normal diagonal entry of the two adjacent cells;
    /// arithmetic mean of the other entries.
    Harmonic,
}

impl FaceAveraging {
    pub fn resolve(self, discontinuous: bool) -> FaceAveraging {
        match self {
            FaceAveraging::Auto if discontinuous => FaceAveraging::Harmonic,
            FaceAveraging::Auto => FaceAveraging::Midpoint,
            other => other,
        }
    }
}

/// Number of faces normal to `axis` and their shape.
pub fn face_shape(grid: &Grid, axis: usize) -> Vec<usize> {
    let mut s = grid.shape().to_vec();
    if !grid.is_periodic() {
        s[axis] += 1;
    }
    s
}

pub fn face_count(grid: &Grid, axis: usize) -> usize {
    face_shape(grid, axis).iter().product()
}

#[inline]
fn unravel(shape: &[usize], mut lin: usize, out: &mut [usize]) {
    for a in 0..shape.len() {
        out[a] = lin % shape[a];
        lin /= shape[a];
    }
}

#[inline]
fn ravel(shape: &[usize], idx: &[usize]) -> usize {
    let mut lin = 0;
    for a in (0..shape.len()).rev() {
        lin = lin * shape[a] + idx[a];
    }
    lin
}

/// Per-axis face arrays: `data[i][j * n_faces_i + f]` is component `j` on face
/// `f` normal to axis `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceVectors {
    pub dim: usize,
    pub counts: Vec<usize>,
    pub data: Vec<Vec<f64>>,
}

impl FaceVectors {
    pub fn zeros(grid: &Grid) -> Self {
        let d = grid.dim();
        let counts: Vec<usize> = (0..d).map(|i| face_count(grid, i)).collect();
        FaceVectors {
            dim: d,
            data: counts.iter().map(|n| vec![0.0; d * n]).collect(),
            counts,
        }
    }

    #[inline]
    pub fn get(&self, axis: usize, comp: usize, face: usize) -> f64 {
        self.data[axis][comp * self.counts[axis] + face]
    }

    pub fn component(&self, axis: usize, comp: usize) -> &[f64] {
        let n = self.counts[axis];
        &self.data[axis][comp * n..(comp + 1) * n]
    }
}

/// One scalar per face (e.g. the normal flux), per axis.
pub type FaceScalars = Vec<Vec<f64>>;

/// Row `i` of the coefficient matrix on the faces normal to axis `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceCoefficients {
    grid: Grid,
    rows: FaceVectors,
}

impl FaceCoefficients {
    /// Samples the matrix field `a` on the faces of `grid`.
    pub fn sample(grid: &Grid, averaging: FaceAveraging, a: impl Fn(&[f64]) -> Mat + Sync) -> Self {
        let d = grid.dim();
        let h = grid.spacing();
        let mut rows = FaceVectors::zeros(grid);
        let cell_vals: Option<Vec<Mat>> = match averaging {
            FaceAveraging::Harmonic => Some(
                (0..grid.len())
                    .into_par_iter()
                    .map(|c| a(&grid.center(c)))
                    .collect(),
            ),
            _ => None,
        };
        for i in 0..d {
            let fshape = face_shape(grid, i);
            let n = rows.counts[i];
            let vals: Vec<ArrayVec<f64, 3>> = (0..n)
                .into_par_iter()
                .map(|f| {
                    let mut idx = [0usize; 3];
                    unravel(&fshape, f, &mut idx[..d]);
                    let mut out = ArrayVec::new();
                    match &cell_vals {
                        None => {
                            let mut x = [0.0; 3];
                            for a_ in 0..d {
                                let off = if a_ == i { 0.0 } else { 0.5 };
                                x[a_] = grid.lower()[a_] + (idx[a_] as f64 + off) * h;
                            }
                            let m = a(&x[..d]);
                            for j in 0..d {
                                out.push(m.get(i, j));
                            }
                        }
                        Some(cells) => {
                            let (lo, hi) = adjacent_cells(grid, i, &idx[..d]);
                            let pick = |c: Option<usize>| c.map(|c| &cells[c]);
                            let (ml, mh) = match (pick(lo), pick(hi)) {
                                (Some(l), Some(u)) => (l, u),
                                (Some(l), None) => (l, l),
                                (None, Some(u)) => (u, u),
                                (None, None) => unreachable!(),
                            };
                            for j in 0..d {
                                let (p, q) = (ml.get(i, j), mh.get(i, j));
                                let v = if j == i {
                                    if p + q == 0.0 {
                                        0.0
                                    } else {
                                        2.0 * p * q / (p + q)
                                    }
                                } else {
                                    0.5 * (p + q)
                                };
                                out.push(v);
                            }
                        }
                    }
                    out
                })
                .collect();
            for (f, v) in vals.iter().enumerate() {
                for j in 0..d {
                    rows.data[i][j * n + f] = v[j];
                }
            }
        }
        FaceCoefficients {
            grid: grid.clone(),
            rows,
        }
    }

    /// Face coefficients of a constant matrix.
    /// Wraps face rows that were computed elsewhere (e.g. copied from another grid).
    pub fn from_rows(grid: &Grid, rows: FaceVectors) -> Result<Self> {
        let d = grid.dim();
        let ok = rows.dim == d
            && (0..d).all(|i| rows.counts[i] == face_count(grid, i) && rows.data[i].len() == d * rows.counts[i]);
        if !ok {
            return Err(Error::InvalidGrid("face rows do not match the grid".into()));
        }
        Ok(FaceCoefficients {
            grid: grid.clone(),
            rows,
        })
    }

    pub fn constant(grid: &Grid, m: &Mat) -> Self {
        Self::sample(grid, FaceAveraging::Midpoint, |_| *m)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn get(&self, axis: usize, j: usize, face: usize) -> f64 {
        self.rows.get(axis, j, face)
    }

    pub fn rows(&self) -> &FaceVectors {
        &self.rows
    }

    /// Entrywise difference `self - other` (same grid).
    pub fn minus(&self, other: &FaceCoefficients) -> FaceCoefficients {
        let mut rows = self.rows.clone();
        for (r, o) in rows.data.iter_mut().zip(&other.rows.data) {
            r.iter_mut().zip(o).for_each(|(a, b)| *a -= b);
        }
        FaceCoefficients {
            grid: self.grid.clone(),
            rows,
        }
    }

    /// True when all off-diagonal face entries vanish.
    pub fn is_diagonal(&self) -> bool {
        let d = self.grid.dim();
        (0..d).all(|i| (0..d).filter(|&j| j != i).all(|j| self.rows.component(i, j).iter().all(|v| *v == 0.0)))
    }

    /// Normal fluxes `F^i = sum_j a_ij (p_j + G_j)` from face gradients.
    pub fn flux(&self, grad: Option<&FaceVectors>, p: Option<&[f64]>) -> FaceScalars {
        let d = self.grid.dim();
        (0..d)
            .map(|i| {
                let n = self.rows.counts[i];
                (0..n)
                    .map(|f| {
                        let mut s = 0.0;
                        for j in 0..d {
                            let mut g = p.map_or(0.0, |p| p[j]);
                            if let Some(gr) = grad {
                                g += gr.get(i, j, f);
                            }
                            s += self.get(i, j, f) * g;
                        }
                        s
                    })
                    .collect()
            })
            .collect()
    }
}

/// Cells below and above face `idx` normal to `axis`; `None` outside a box.
fn adjacent_cells(grid: &Grid, axis: usize, idx: &[usize]) -> (Option<usize>, Option<usize>) {
    let d = grid.dim();
    let n = grid.shape()[axis];
    let mut c = [0usize; 3];
    c[..d].copy_from_slice(idx);
    let m = idx[axis];
    if grid.is_periodic() {
        let hi = grid.linear(&c[..d]);
        c[axis] = (m + n - 1) % n;
        (Some(grid.linear(&c[..d])), Some(hi))
    } else {
        let hi = if m < n { Some(grid.linear(&c[..d])) } else { None };
        let lo = if m > 0 {
            c[axis] = m - 1;
            Some(grid.linear(&c[..d]))
        } else {
            None
        };
        (lo, hi)
    }
}

/// Dirichlet data on the boundary of a box grid.
pub type Boundary<'a> = Option<&'a (dyn Fn(&[f64]) -> f64 + Sync)>;

/// Linear stencil of one face-gradient component plus the affine part coming
/// from boundary data.
struct Stencil {
    terms: ArrayVec<(usize, f64), 4>,
    affine: f64,
}

fn boundary_point(grid: &Grid, cell: &[usize], axis: usize, upper: bool, out: &mut [f64]) {
    grid.center_into(cell, out);
    let h = grid.spacing();
    out[axis] += if upper { 0.5 * h } else { -0.5 * h };
}

/// Centered difference in direction `j` at cell `c`, with mirrored ghosts.
fn centered(grid: &Grid, cell: &[usize], j: usize, weight: f64, bc: Boundary, st: &mut Stencil) {
    let d = grid.dim();
    let h = grid.spacing();
    let n = grid.shape()[j];
    let w = weight / (2.0 * h);
    let mut nb = [0usize; 3];
    nb[..d].copy_from_slice(cell);
    let k = cell[j];
    let c = grid.linear(cell);
    let mut x = [0.0; 3];
    // upper neighbor
    if grid.is_periodic() || k + 1 < n {
        nb[j] = (k + 1) % n;
        st.terms.push((grid.linear(&nb[..d]), w));
    } else {
        st.terms.push((c, -w));
        if let Some(g) = bc {
            boundary_point(grid, cell, j, true, &mut x[..d]);
            st.affine += 2.0 * w * g(&x[..d]);
        }
    }
    // lower neighbor
    if grid.is_periodic() || k > 0 {
        nb[j] = (k + n - 1) % n;
        st.terms.push((grid.linear(&nb[..d]), -w));
    } else {
        st.terms.push((c, w));
        if let Some(g) = bc {
            boundary_point(grid, cell, j, false, &mut x[..d]);
            st.affine -= 2.0 * w * g(&x[..d]);
        }
    }
}

fn gradient_stencil(grid: &Grid, axis: usize, fidx: &[usize], j: usize, bc: Boundary) -> Stencil {
    let d = grid.dim();
    let h = grid.spacing();
    let mut st = Stencil {
        terms: ArrayVec::new(),
        affine: 0.0,
    };
    let (lo, hi) = adjacent_cells(grid, axis, fidx);
    let mut cell = [0usize; 3];
    let mut x = [0.0; 3];
    match (lo, hi) {
        (Some(l), Some(u)) => {
            if j == axis {
                st.terms.push((u, 1.0 / h));
                st.terms.push((l, -1.0 / h));
            } else {
                grid.multi_index(l, &mut cell[..d]);
                centered(grid, &cell[..d], j, 0.5, bc, &mut st);
                grid.multi_index(u, &mut cell[..d]);
                centered(grid, &cell[..d], j, 0.5, bc, &mut st);
            }
        }
        (Some(c), None) | (None, Some(c)) => {
            let upper = hi.is_none();
            grid.multi_index(c, &mut cell[..d]);
            if j == axis {
                let s = if upper { -2.0 / h } else { 2.0 / h };
                st.terms.push((c, s));
                if let Some(g) = bc {
                    boundary_point(grid, &cell[..d], axis, upper, &mut x[..d]);
                    st.affine -= s * g(&x[..d]);
                }
            } else if let Some(g) = bc {
                boundary_point(grid, &cell[..d], axis, upper, &mut x[..d]);
                x[j] += h;
                let gp = g(&x[..d]);
                x[j] -= 2.0 * h;
                let gm = g(&x[..d]);
                st.affine += (gp - gm) / (2.0 * h);
            }
        }
        (None, None) => unreachable!(),
    }
    st
}

/// Face gradients `G u` (all components on all faces).
pub fn face_gradient(grid: &Grid, u: &[f64], bc: Boundary) -> FaceVectors {
    let d = grid.dim();
    let mut out = FaceVectors::zeros(grid);
    for i in 0..d {
        let fshape = face_shape(grid, i);
        let n = out.counts[i];
        let data = &mut out.data[i];
        data.par_chunks_mut(n).enumerate().for_each(|(j, comp)| {
            let mut idx = [0usize; 3];
            for (f, slot) in comp.iter_mut().enumerate() {
                unravel(&fshape, f, &mut idx[..d]);
                let st = gradient_stencil(grid, i, &idx[..d], j, bc);
                *slot = st.affine + st.terms.iter().map(|(c, w)| w * u[*c]).sum::<f64>();
            }
        });
    }
    out
}

/// Discrete divergence `(1/h) sum_i (F^i(upper face) - F^i(lower face))` per cell.
pub fn divergence(grid: &Grid, flux: &FaceScalars) -> Vec<f64> {
    let d = grid.dim();
    let h = grid.spacing();
    (0..grid.len())
        .into_par_iter()
        .map(|c| {
            let mut idx = [0usize; 3];
            grid.multi_index(c, &mut idx[..d]);
            let mut s = 0.0;
            for i in 0..d {
                let (fl, fu) = cell_faces(grid, i, &idx[..d]);
                s += flux[i][fu] - flux[i][fl];
            }
            s / h
        })
        .collect()
}

/// Lower and upper faces (normal to `axis`) of the cell `idx`.
#[inline]
pub fn cell_faces(grid: &Grid, axis: usize, idx: &[usize]) -> (usize, usize) {
    let d = grid.dim();
    let fshape = face_shape(grid, axis);
    let mut f = [0usize; 3];
    f[..d].copy_from_slice(idx);
    let lower = ravel(&fshape, &f[..d]);
    f[axis] = if grid.is_periodic() {
        (idx[axis] + 1) % grid.shape()[axis]
    } else {
        idx[axis] + 1
    };
    (lower, ravel(&fshape, &f[..d]))
}

/// Face index of `fidx` (a face multi-index) normal to `axis`.
pub fn face_linear(grid: &Grid, axis: usize, fidx: &[usize]) -> usize {
    ravel(&face_shape(grid, axis), fidx)
}

/// Face multi-index of the linear face `f` normal to `axis`.
pub fn face_multi(grid: &Grid, axis: usize, f: usize, out: &mut [usize]) {
    unravel(&face_shape(grid, axis), f, out);
}

/// Assembles the matrix of `u -> -div(a G u)` with homogeneous boundary data.
pub fn assemble(coeffs: &FaceCoefficients) -> Csr {
    let grid = coeffs.grid();
    let d = grid.dim();
    let h = grid.spacing();
    let n = grid.len();
    let row_of = |c: usize| {
        let mut idx = [0usize; 3];
        grid.multi_index(c, &mut idx[..d]);
        // columns stay in the 3^d neighbourhood
        let mut row: ArrayVec<(usize, f64), 27> = ArrayVec::new();
        let mut add = |col: usize, v: f64| {
            if let Some(e) = row.iter_mut().find(|e| e.0 == col) {
                e.1 += v;
            } else {
                row.push((col, v));
            }
        };
        for i in 0..d {
            let (fl, fu) = cell_faces(grid, i, &idx[..d]);
            let mut fidx = [0usize; 3];
            for (face, sign) in [(fu, -1.0 / h), (fl, 1.0 / h)] {
                face_multi(grid, i, face, &mut fidx[..d]);
                for j in 0..d {
                    let a = coeffs.get(i, j, face);
                    if a == 0.0 {
                        continue;
                    }
                    let st = gradient_stencil(grid, i, &fidx[..d], j, None);
                    for (col, w) in st.terms {
                        add(col, sign * a * w);
                    }
                }
            }
        }
        row
    };
    const CHUNK: usize = 1 << 15;
    let mut b = CsrBuilder::new(n, n * (2 * d + 1));
    for start in (0..n).step_by(CHUNK) {
        let rows: Vec<ArrayVec<(usize, f64), 27>> = (start..(start + CHUNK).min(n)).into_par_iter().map(row_of).collect();
        for r in rows {
            b.push_row(r.into_iter().filter(|e| e.1 != 0.0));
        }
    }
    b.finish()
}

/// Right-hand-side contribution `div F(0; g, p)` of boundary data and a
/// constant gradient `p`, so that `A u = f + rhs` discretizes
/// `-div(a (p + grad u)) = f`, `u = g` on the boundary.
pub fn affine_rhs(coeffs: &FaceCoefficients, bc: Boundary, p: Option<&[f64]>) -> Result<Vec<f64>> {
    let grid = coeffs.grid();
    let zero = vec![0.0; grid.len()];
    let grad = if bc.is_some() {
        Some(face_gradient(grid, &zero, bc))
    } else {
        None
    };
    let flux = coeffs.flux(grad.as_ref(), p);
    Ok(divergence(grid, &flux))
}
