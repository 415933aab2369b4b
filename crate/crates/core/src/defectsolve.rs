//! Defect correctors on truncated Dirichlet boxes, the defect flux `M̃`, its
//! skew potential `B̃`, and growth profiles of correctors and potentials.
//!
//! All box grids here live in the fast variable `y` with the same spacing as
//! the periodic cell grid, so box faces map onto torus faces by an integer
//! offset.

use crate::cellsolve::{self, PeriodicCell, PeriodicCorrector, PotentialIdentities};
use crate::error::{Error, Result};
use crate::fft::{self, Convolver};
use crate::fields::{self, CoefficientField, Components, Grid, GridField};
use crate::fv::{self, FaceAveraging, FaceCoefficients, FaceScalars, FaceVectors};
use crate::linalg::{self, SolveStats, SolverOptions};
use crate::stats;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// `|ã|` below this value counts as outside the effective support.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

/// Second box used by the truncation diagnostic.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Doubling {
    #[default]
    Off,
    /// Compare against the box of half-width `2L`.
    Double,
    /// Compare against the box of half-width `L/2` (cheaper).
    Halve,
}

/// Dirichlet box `(-L, L)^d` with `cells_per_unit` cells per period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPlan {
    /// `L`, in periods.
    pub half_width: usize,
    pub cells_per_unit: usize,
    #[serde(default)]
    pub doubling: Doubling,
}

/// Radius of the region where the defect matters.
///
/// Compactly supported defects use `|ã| > SUPPORT_THRESHOLD`. Algebraically
/// decaying defects never drop below the threshold at desk scale; for them the
/// half-maximum radius is used.
pub fn effective_support_radius(field: &CoefficientField) -> f64 {
    if !field.has_defect() {
        return 0.0;
    }
    let d = field.dim();
    let radial = |s: f64| {
        let mut x = vec![0.0; d];
        x[0] = s;
        field.defect_scalar(&x).abs()
    };
    let bisect = |lo: f64, hi: f64, inside: &dyn Fn(f64) -> bool| {
        let (mut a, mut b) = (lo, hi);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if inside(m) {
                a = m;
            } else {
                b = m;
            }
        }
        b
    };
    if let Some(rho) = field.support_radius() {
        return bisect(0.0, rho, &|s| radial(s) > SUPPORT_THRESHOLD);
    }
    let peak = field.defect_tail_bound(0.0);
    if !peak.is_finite() {
        return f64::INFINITY;
    }
    let mut hi = 1.0;
    while field.defect_tail_bound(hi) > 0.5 * peak && hi < 1e12 {
        hi *= 2.0;
    }
    bisect(0.0, hi, &|s| field.defect_tail_bound(s) > 0.5 * peak)
}

impl TruncationPlan {
    pub fn new(half_width: usize, cells_per_unit: usize) -> Self {
        TruncationPlan {
            half_width,
            cells_per_unit,
            doubling: Doubling::Off,
        }
    }

    /// Smallest admissible half-width: four support diameters.
    pub fn required_half_width(field: &CoefficientField) -> f64 {
        8.0 * effective_support_radius(field)
    }

    /// Plan with `L >= max(min_half_width, required)`.
    pub fn for_field(field: &CoefficientField, min_half_width: f64, cells_per_unit: usize) -> Self {
        let need = Self::required_half_width(field).max(min_half_width).max(1.0);
        Self::new(need.ceil() as usize, cells_per_unit)
    }

    pub fn with_doubling(mut self, doubling: Doubling) -> Self {
        self.doubling = doubling;
        self
    }

    pub fn validate(&self, field: &CoefficientField) -> Result<()> {
        if self.cells_per_unit < fields::MIN_RESOLUTION {
            return Err(Error::TruncationPlan(format!(
                "{} cells per period, need at least {}",
                self.cells_per_unit,
                fields::MIN_RESOLUTION
            )));
        }
        let need = Self::required_half_width(field);
        if (self.half_width as f64) < need {
            return Err(Error::TruncationPlan(format!(
                "half-width {} is below four support diameters ({need:.3})",
                self.half_width
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        1.0 / self.cells_per_unit as f64
    }

    pub fn grid(&self, dim: usize) -> Result<Grid> {
        Grid::centered_box(dim, self.half_width as f64, self.spacing())
    }
}

/// Box grid, face coefficients, and the map onto the periodic cell.
#[derive(Clone, Debug)]
pub struct DefectBox {
    pub plan: TruncationPlan,
    pub grid: Grid,
    /// Total coefficient `a` on the box faces.
    pub coeffs: FaceCoefficients,
    /// Periodic part, copied from the cell faces.
    pub per_coeffs: FaceCoefficients,
    torus: Grid,
    offset: Vec<i64>,
}

impl DefectBox {
    pub fn new(
        field: &CoefficientField,
        cell: &PeriodicCell,
        plan: &TruncationPlan,
        averaging: FaceAveraging,
    ) -> Result<Self> {
        field.ensure_solvable()?;
        plan.validate(field)?;
        let d = field.dim();
        let torus = cell.coeffs.grid().clone();
        if torus.shape()[0] != plan.cells_per_unit {
            return Err(Error::TruncationPlan(format!(
                "cell grid has {} cells per period, plan asks for {}",
                torus.shape()[0],
                plan.cells_per_unit
            )));
        }
        let grid = plan.grid(d)?;
        let offset = torus
            .cell_offset(&grid)
            .ok_or_else(|| Error::InvalidGrid("box is not aligned with the cell lattice".into()))?;
        let avg = averaging.resolve(field.is_discontinuous());
        let coeffs = FaceCoefficients::sample(&grid, avg, |x| field.eval_matrix(x));
        let mut b = DefectBox {
            plan: plan.clone(),
            per_coeffs: coeffs.clone(),
            coeffs,
            grid,
            torus,
            offset,
        };
        let rows = b.map_faces(cell.coeffs.rows());
        b.per_coeffs = FaceCoefficients::from_rows(&b.grid, rows)?;
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Torus face (normal to `axis`) that carries the same values as box
    /// face `f`.
    pub fn torus_face(&self, axis: usize, f: usize) -> usize {
        let d = self.dim();
        let mut idx = [0usize; 3];
        fv::face_multi(&self.grid, axis, f, &mut idx[..d]);
        for a in 0..d {
            let n = self.torus.shape()[a] as i64;
            idx[a] = (idx[a] as i64 + self.offset[a]).rem_euclid(n) as usize;
        }
        fv::face_linear(&self.torus, axis, &idx[..d])
    }

    /// Torus cell matching box cell `c`.
    pub fn torus_cell(&self, c: usize) -> usize {
        let d = self.dim();
        let mut idx = [0usize; 3];
        self.grid.multi_index(c, &mut idx[..d]);
        for a in 0..d {
            let n = self.torus.shape()[a] as i64;
            idx[a] = (idx[a] as i64 + self.offset[a]).rem_euclid(n) as usize;
        }
        self.torus.linear(&idx[..d])
    }

    /// Copies torus face vectors onto the box faces.
    pub fn map_faces(&self, src: &FaceVectors) -> FaceVectors {
        let d = self.dim();
        let mut out = FaceVectors::zeros(&self.grid);
        for i in 0..d {
            let n = out.counts[i];
            let map: Vec<usize> = (0..n).map(|f| self.torus_face(i, f)).collect();
            for j in 0..d {
                for (f, t) in map.iter().enumerate() {
                    out.data[i][j * n + f] = src.get(i, j, *t);
                }
            }
        }
        out
    }

    /// Defect part `ã = a - a_per` on the faces.
    pub fn defect_coeffs(&self) -> FaceCoefficients {
        self.coeffs.minus(&self.per_coeffs)
    }
}

/// How a face value of the corrector is set on the box boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryRule {
    /// Homogeneous Dirichlet data.
    Zero,
    /// Half-cell extrapolation with the boundary face gradient.
    Extrapolate,
}

/// Defect corrector `w̃_{e_k}` on the box.
#[derive(Clone, Debug)]
pub struct DefectCorrector {
    pub k: usize,
    pub w: GridField,
    /// `G w̃` on the box faces.
    pub face_grad: FaceVectors,
    /// `G w_per` copied onto the box faces.
    pub per_face_grad: FaceVectors,
    pub boundary: BoundaryRule,
    /// `None` when no linear solve was needed.
    pub stats: Option<SolveStats>,
}

impl DefectCorrector {
    pub fn grid(&self) -> &Grid {
        self.w.grid()
    }

    /// Value of `w̃` on a face normal to `axis`: mean of the adjacent cells.
    pub fn face_value(&self, axis: usize, f: usize) -> f64 {
        let g = self.grid();
        let d = g.dim();
        let mut idx = [0usize; 3];
        fv::face_multi(g, axis, f, &mut idx[..d]);
        let n = g.shape()[axis];
        let m = idx[axis];
        let w = self.w.values();
        let h = g.spacing();
        if m > 0 && m < n {
            let hi = g.linear(&idx[..d]);
            idx[axis] = m - 1;
            return 0.5 * (w[hi] + w[g.linear(&idx[..d])]);
        }
        match self.boundary {
            BoundaryRule::Zero => 0.0,
            BoundaryRule::Extrapolate => {
                let gf = self.face_grad.get(axis, axis, f);
                if m == 0 {
                    w[g.linear(&idx[..d])] - 0.5 * h * gf
                } else {
                    idx[axis] = m - 1;
                    w[g.linear(&idx[..d])] + 0.5 * h * gf
                }
            }
        }
    }

    /// Cell-centered `∇w̃`.
    pub fn cell_gradient(&self) -> GridField {
        cellsolve::cell_gradient_from_faces(self.grid(), &self.face_grad)
    }

    /// `‖G w̃‖_{L²}` over the box, normal components on faces.
    pub fn gradient_l2(&self) -> f64 {
        let g = self.grid();
        let d = g.dim();
        let vol = g.cell_volume();
        let s: f64 = (0..d)
            .map(|i| self.face_grad.component(i, i).iter().map(|v| v * v).sum::<f64>())
            .sum();
        (s * vol).sqrt()
    }
}

/// Solves `-div(a grad w̃) = div(ã (e_k + grad w_per))` on the box.
///
/// In one dimension the flux `a (1 + w_per' + w̃')` equals `a*` exactly, so
/// `w̃'` is set from that identity on every face and integrated from the left
/// boundary; no truncation is involved.
pub fn solve_defect_corrector(
    field: &CoefficientField,
    cell: &PeriodicCell,
    setup: &DefectBox,
    k: usize,
    solver: &SolverOptions,
) -> Result<DefectCorrector> {
    let d = setup.dim();
    if k >= d {
        return Err(Error::DimensionMismatch { expected: d, got: k + 1 });
    }
    field.ensure_solvable()?;
    let grid = setup.grid.clone();
    let per_face_grad = setup.map_faces(&cell.correctors[k].face_grad);
    if d == 1 {
        let a_star = cell.a_star.a_star.get(0, 0);
        let n = grid.len();
        let h = grid.spacing();
        let mut fg = FaceVectors::zeros(&grid);
        for f in 0..=n {
            let a = setup.coeffs.get(0, 0, f);
            fg.data[0][f] = a_star / a - 1.0 - per_face_grad.get(0, 0, f);
        }
        let mut w = vec![0.0; n];
        let mut acc = 0.5 * h * fg.data[0][0];
        w[0] = acc;
        for c in 1..n {
            acc += h * fg.data[0][c];
            w[c] = acc;
        }
        return Ok(DefectCorrector {
            k,
            w: GridField::scalar(grid, w)?,
            face_grad: fg,
            per_face_grad,
            boundary: BoundaryRule::Extrapolate,
            stats: None,
        });
    }
    let mut p = vec![0.0; d];
    p[k] = 1.0;
    let phi = setup.defect_coeffs().flux(Some(&per_face_grad), Some(&p));
    let rhs = fv::divergence(&grid, &phi);
    let mut w = vec![0.0; grid.len()];
    let stats = if rhs.iter().all(|v| *v == 0.0) {
        None
    } else {
        let a = fv::assemble(&setup.coeffs);
        Some(linalg::solve(&a, &rhs, &mut w, grid.shape(), false, solver)?)
    };
    let face_grad = fv::face_gradient(&grid, &w, None);
    Ok(DefectCorrector {
        k,
        w: GridField::scalar(grid, w)?,
        face_grad,
        per_face_grad,
        boundary: BoundaryRule::Zero,
        stats,
    })
}

/// Defect correctors for every direction.
pub fn solve_defect_correctors(
    field: &CoefficientField,
    cell: &PeriodicCell,
    setup: &DefectBox,
    solver: &SolverOptions,
) -> Result<Vec<DefectCorrector>> {
    (0..setup.dim())
        .map(|k| solve_defect_corrector(field, cell, setup, k, solver))
        .collect()
}

/// Relative change of `‖∇w̃_{e_k}‖_{L²}` between the plan's box and the box
/// selected by `plan.doubling`, per direction.
pub fn truncation_diagnostic(
    field: &CoefficientField,
    cell: &PeriodicCell,
    plan: &TruncationPlan,
    averaging: FaceAveraging,
    solver: &SolverOptions,
) -> Result<Option<Vec<f64>>> {
    let other_hw = match plan.doubling {
        Doubling::Off => return Ok(None),
        Doubling::Double => 2 * plan.half_width,
        Doubling::Halve => plan.half_width / 2,
    };
    let base = DefectBox::new(field, cell, plan, averaging)?;
    // the halved box is a diagnostic only and may sit below the admissible size
    let other_plan = TruncationPlan::new(other_hw.max(1), plan.cells_per_unit);
    let other = if other_hw >= plan.half_width {
        DefectBox::new(field, cell, &other_plan, averaging)?
    } else {
        unchecked_box(field, cell, &other_plan, averaging)?
    };
    let mut out = Vec::new();
    for k in 0..field.dim() {
        let a = solve_defect_corrector(field, cell, &base, k, solver)?.gradient_l2();
        let b = solve_defect_corrector(field, cell, &other, k, solver)?.gradient_l2();
        let (big, small) = if other_hw >= plan.half_width { (b, a) } else { (a, b) };
        out.push(if big == 0.0 { 0.0 } else { (big - small).abs() / big });
    }
    Ok(Some(out))
}

fn unchecked_box(
    field: &CoefficientField,
    cell: &PeriodicCell,
    plan: &TruncationPlan,
    averaging: FaceAveraging,
) -> Result<DefectBox> {
    let mut relaxed = plan.clone();
    let need = TruncationPlan::required_half_width(field).ceil() as usize;
    if relaxed.half_width >= need {
        return DefectBox::new(field, cell, &relaxed, averaging);
    }
    // build at an admissible size, then rebuild the grid pieces at the small size
    relaxed.half_width = need;
    let mut b = DefectBox::new(field, cell, &relaxed, averaging)?;
    let d = field.dim();
    let grid = plan.grid(d)?;
    let avg = averaging.resolve(field.is_discontinuous());
    b.offset = b
        .torus
        .cell_offset(&grid)
        .ok_or_else(|| Error::InvalidGrid("box is not aligned with the cell lattice".into()))?;
    b.coeffs = FaceCoefficients::sample(&grid, avg, |x| field.eval_matrix(x));
    b.grid = grid;
    b.plan = plan.clone();
    let rows = b.map_faces(cell.coeffs.rows());
    b.per_coeffs = FaceCoefficients::from_rows(&b.grid, rows)?;
    Ok(b)
}

/// Full correctors `w_{e_k} = w_per + w̃ - (w_per + w̃)(0)`.
#[derive(Clone, Debug)]
pub struct CorrectorSet {
    pub periodic: Vec<PeriodicCorrector>,
    pub defect: Option<(DefectBox, Vec<DefectCorrector>)>,
    /// Value subtracted from direction `k` so that `w_{e_k}(0) = 0`.
    pub shift: Vec<f64>,
}

/// Combines the periodic and defect parts and normalizes at the origin.
pub fn assemble_full_corrector(
    cell: &PeriodicCell,
    defect: Option<(DefectBox, Vec<DefectCorrector>)>,
) -> Result<CorrectorSet> {
    let d = cell.correctors.len();
    if let Some((b, ws)) = &defect {
        if b.dim() != d || ws.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: ws.len(),
            });
        }
    }
    let origin = vec![0.0; d];
    let mut shift = Vec::with_capacity(d);
    for k in 0..d {
        let mut s = cell.correctors[k].w.interpolate(0, &origin).unwrap_or(0.0);
        if let Some((_, ws)) = &defect {
            s += ws[k].w.interpolate(0, &origin).unwrap_or(0.0);
        }
        shift.push(s);
    }
    Ok(CorrectorSet {
        periodic: cell.correctors.clone(),
        defect,
        shift,
    })
}

impl CorrectorSet {
    pub fn dim(&self) -> usize {
        self.periodic.len()
    }

    /// `w_{e_k}(y)`; `None` outside the defect box.
    pub fn eval(&self, k: usize, y: &[f64]) -> Option<f64> {
        let mut v = self.periodic[k].w.interpolate(0, y)?;
        if let Some((_, ws)) = &self.defect {
            v += ws[k].w.interpolate(0, y)?;
        }
        Some(v - self.shift[k])
    }

    /// Half-width of the region where `eval` is defined.
    pub fn extent(&self) -> f64 {
        match &self.defect {
            Some((b, _)) => b.plan.half_width as f64,
            None => f64::INFINITY,
        }
    }
}

/// Ratio of the gradient truncation errors of two boxes whose half-widths
/// differ by a factor 2, for a defect with algebraic tail `|x|^(-s)`.
///
/// The Dirichlet cut-off misses `w̃ ~ |x|^(1-s)` on the boundary; near the
/// origin the induced gradient error scales like `L^(-s)`.
pub fn truncation_ratio(power: f64) -> f64 {
    2f64.powf(-power)
}

fn sub_offset(from: &Grid, to: &Grid) -> Result<Vec<usize>> {
    let o = from
        .cell_offset(to)
        .ok_or_else(|| Error::InvalidGrid("boxes are not aligned".into()))?;
    let mut out = Vec::with_capacity(o.len());
    for (a, v) in o.iter().enumerate() {
        if *v < 0 || *v as usize + to.shape()[a] > from.shape()[a] {
            return Err(Error::InvalidGrid("target box is not inside the source box".into()));
        }
        out.push(*v as usize);
    }
    Ok(out)
}

/// Cell values of `v` on the sub-box `to`.
pub fn restrict_cells(v: &GridField, to: &Grid) -> Result<GridField> {
    let from = v.grid();
    let off = sub_offset(from, to)?;
    let d = to.dim();
    let n = to.len();
    let nc = v.n_components();
    let mut out = vec![0.0; nc * n];
    let mut idx = [0usize; 3];
    for c in 0..n {
        to.multi_index(c, &mut idx[..d]);
        for a in 0..d {
            idx[a] += off[a];
        }
        let src = from.linear(&idx[..d]);
        for k in 0..nc {
            out[k * n + c] = v.component(k)[src];
        }
    }
    GridField::new(to.clone(), v.component_shape(), out)
}

fn restrict_faces(src: &FaceVectors, from: &Grid, to: &Grid) -> Result<FaceVectors> {
    let off = sub_offset(from, to)?;
    let d = to.dim();
    let mut out = FaceVectors::zeros(to);
    let mut idx = [0usize; 3];
    for i in 0..d {
        let n = out.counts[i];
        let ns = src.counts[i];
        for f in 0..n {
            fv::face_multi(to, i, f, &mut idx[..d]);
            for a in 0..d {
                idx[a] += off[a];
            }
            let sf = fv::face_linear(from, i, &idx[..d]);
            for j in 0..d {
                out.data[i][j * n + f] = src.data[i][j * ns + sf];
            }
        }
    }
    Ok(out)
}

/// `w̃` of a larger box seen on the sub-box `to`; boundary face values are
/// extrapolated since the field does not vanish there.
pub fn restrict_corrector(c: &DefectCorrector, to: &Grid) -> Result<DefectCorrector> {
    let from = c.grid();
    Ok(DefectCorrector {
        k: c.k,
        w: restrict_cells(&c.w, to)?,
        face_grad: restrict_faces(&c.face_grad, from, to)?,
        per_face_grad: restrict_faces(&c.per_face_grad, from, to)?,
        boundary: BoundaryRule::Extrapolate,
        stats: c.stats,
    })
}

/// `(big - q small) / (1 - q)`, cancelling an error term that shrinks by `q`
/// from the small box to the big one.
pub fn extrapolate_cells(big: &GridField, small: &GridField, q: f64) -> Result<GridField> {
    if big.grid() != small.grid() || big.n_components() != small.n_components() {
        return Err(Error::InvalidGrid("extrapolation needs fields on one grid".into()));
    }
    let v = big
        .values()
        .iter()
        .zip(small.values())
        .map(|(b, s)| (b - q * s) / (1.0 - q))
        .collect();
    GridField::new(big.grid().clone(), big.component_shape(), v)
}

/// Corrector counterpart of [`extrapolate_cells`].
pub fn extrapolate_corrector(big: &DefectCorrector, small: &DefectCorrector, q: f64) -> Result<DefectCorrector> {
    let comb = |a: &FaceVectors, b: &FaceVectors| {
        let mut out = a.clone();
        for (oa, ob) in out.data.iter_mut().zip(&b.data) {
            for (x, y) in oa.iter_mut().zip(ob) {
                *x = (*x - q * y) / (1.0 - q);
            }
        }
        out
    };
    Ok(DefectCorrector {
        k: small.k,
        w: extrapolate_cells(&big.w, &small.w, q)?,
        face_grad: comb(&big.face_grad, &small.face_grad),
        per_face_grad: small.per_face_grad.clone(),
        boundary: BoundaryRule::Extrapolate,
        stats: small.stats,
    })
}

/// Defect flux `M̃_k^i` on the box faces: `-ã (e_k + G w_per) - a G w̃`.
#[derive(Clone, Debug)]
pub struct DefectFlux {
    pub grid: Grid,
    /// `m[k][i]`: box face array normal to axis `i`.
    pub m: Vec<FaceScalars>,
}

pub fn defect_flux(setup: &DefectBox, correctors: &[DefectCorrector]) -> DefectFlux {
    let d = setup.dim();
    let tilde = setup.defect_coeffs();
    let m = correctors
        .iter()
        .map(|c| {
            let mut p = vec![0.0; d];
            p[c.k] = 1.0;
            let phi = tilde.flux(Some(&c.per_face_grad), Some(&p));
            let aw = setup.coeffs.flux(Some(&c.face_grad), None);
            phi.iter()
                .zip(&aw)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| -x - y).collect())
                .collect()
        })
        .collect();
    DefectFlux {
        grid: setup.grid.clone(),
        m,
    }
}

impl DefectFlux {
    /// `L^q` norm of the pointwise face-averaged flux `M̃_k` over the box.
    pub fn lq_norm(&self, k: usize, q: f64) -> f64 {
        let g = &self.grid;
        let d = g.dim();
        let n = g.len();
        let mut idx = [0usize; 3];
        let mut s = 0.0;
        let mut mx = 0.0f64;
        for c in 0..n {
            g.multi_index(c, &mut idx[..d]);
            let mut v2 = 0.0;
            for i in 0..d {
                let (fl, fu) = fv::cell_faces(g, i, &idx[..d]);
                let v = 0.5 * (self.m[k][i][fl] + self.m[k][i][fu]);
                v2 += v * v;
            }
            let v = v2.sqrt();
            mx = mx.max(v);
            s += v.powf(q);
        }
        if q.is_infinite() {
            mx
        } else {
            (s * g.cell_volume()).powf(1.0 / q)
        }
    }
}

/// Construction of `B̃`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PotentialRoute {
    /// Convolution with the Newtonian-gradient kernel (default in 2D).
    #[default]
    Convolution,
    /// Poisson solve on a zero-padded torus (used in 3D).
    Poisson,
}

/// Staggered defect potential on the common `(N+1)^d` layout of the box.
///
/// Layout index `p` of a face array normal to `i` is the face multi-index;
/// `B^{ij}[p]` sits at the corner `lower + h(p + 1/2) - h/2 (e_i + e_j)`.
#[derive(Clone, Debug)]
pub struct DefectPotential {
    pub grid: Grid,
    pub layout: Grid,
    pub route: PotentialRoute,
    /// `m[k][i]` embedded in the layout.
    pub m: Vec<Vec<Vec<f64>>>,
    /// `b[k][i * d + j]` on the layout.
    pub b: Vec<Vec<Vec<f64>>>,
}

fn layout_grid(grid: &Grid) -> Result<Grid> {
    let shape: Vec<usize> = grid.shape().iter().map(|n| n + 1).collect();
    Grid::new(grid.lower().to_vec(), shape, grid.spacing(), false)
}

fn embed_faces(grid: &Grid, layout: &Grid, axis: usize, faces: &[f64]) -> Vec<f64> {
    let d = grid.dim();
    let mut out = vec![0.0; layout.len()];
    let mut idx = [0usize; 3];
    for (f, v) in faces.iter().enumerate() {
        fv::face_multi(grid, axis, f, &mut idx[..d]);
        out[layout.linear(&idx[..d])] = *v;
    }
    out
}

/// `H(x, y)` with `∂_x ∂_y H = x / (x² + y²)`.
fn log_antiderivative(x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    if r2 == 0.0 {
        return 0.0;
    }
    let at = if x == 0.0 { 0.0 } else { 2.0 * x * (y / x).atan() };
    0.5 * (y * r2.ln() - 2.0 * y + at)
}

/// `∫ z_1 / (2π |z|²)` over the square of side `h` centered at `(cx, cy)`.
///
/// Exact antiderivative near the origin, 3x3 Gauss beyond eight cells.
pub fn kernel_cell_integral_2d(cx: f64, cy: f64, h: f64) -> f64 {
    if cx.abs().max(cy.abs()) > 8.0 * h {
        let t = 0.6f64.sqrt();
        let g = [(-t, 5.0 / 9.0), (0.0, 8.0 / 9.0), (t, 5.0 / 9.0)];
        let mut s = 0.0;
        for (ta, wa) in g.iter() {
            for (tb, wb) in g.iter() {
                let x = cx + 0.5 * h * ta;
                let y = cy + 0.5 * h * tb;
                s += wa * wb * x / (x * x + y * y);
            }
        }
        return s * 0.25 * h * h / (2.0 * PI);
    }
    let (x1, x2, y1, y2) = (cx - 0.5 * h, cx + 0.5 * h, cy - 0.5 * h, cy + 0.5 * h);
    let v = log_antiderivative(x2, y2) - log_antiderivative(x1, y2) - log_antiderivative(x2, y1)
        + log_antiderivative(x1, y1);
    v / (2.0 * PI)
}

/// Builds `B̃_k` from `M̃_k`.
pub fn defect_potential(flux: &DefectFlux, route: PotentialRoute) -> Result<DefectPotential> {
    let grid = flux.grid.clone();
    let d = grid.dim();
    let layout = layout_grid(&grid)?;
    let h = grid.spacing();
    let m: Vec<Vec<Vec<f64>>> = flux
        .m
        .iter()
        .map(|mk| (0..d).map(|i| embed_faces(&grid, &layout, i, &mk[i])).collect())
        .collect();
    let zero = vec![0.0; layout.len()];
    let mut b: Vec<Vec<Vec<f64>>> = vec![vec![zero; d * d]; m.len()];
    if d == 1 {
        return Ok(DefectPotential {
            grid,
            layout,
            route,
            m,
            b,
        });
    }
    match route {
        PotentialRoute::Convolution => {
            if d != 2 {
                return Err(Error::Unsupported(
                    "convolution route is implemented in two dimensions; use the Poisson route".into(),
                ));
            }
            let conv = Convolver::new(layout.shape());
            // B^{01} = K_0 * M^1 - K_1 * M^0
            let k0 = conv.transform_kernel(|o| kernel_cell_integral_2d((o[0] as f64 - 0.5) * h, o[1] as f64 * h, h));
            let k1 = conv.transform_kernel(|o| kernel_cell_integral_2d((o[1] as f64 - 0.5) * h, o[0] as f64 * h, h));
            for (mk, bk) in m.iter().zip(b.iter_mut()) {
                if mk.iter().all(|a| a.iter().all(|v| *v == 0.0)) {
                    continue;
                }
                let x1 = conv.transform_input(&mk[1]);
                let x0 = conv.transform_input(&mk[0]);
                let v = conv.apply_sum(&[(&k0, &x1, 1.0), (&k1, &x0, -1.0)]);
                bk[d] = v.iter().map(|x| -x).collect();
                bk[1] = v;
            }
        }
        PotentialRoute::Poisson => {
            let padded: Vec<usize> = layout.shape().iter().map(|n| fft::next_fast_len(2 * n)).collect();
            let torus = Grid::new(vec![0.0; d], padded.clone(), h, true)?;
            let to_torus = |src: &[f64]| {
                let mut out = vec![0.0; torus.len()];
                let mut idx = [0usize; 3];
                for (l, v) in src.iter().enumerate() {
                    layout.multi_index(l, &mut idx[..d]);
                    out[torus.linear(&idx[..d])] = *v;
                }
                out
            };
            let from_torus = |src: &[f64]| {
                let mut idx = [0usize; 3];
                (0..layout.len())
                    .map(|l| {
                        layout.multi_index(l, &mut idx[..d]);
                        src[torus.linear(&idx[..d])]
                    })
                    .collect::<Vec<f64>>()
            };
            for (mk, bk) in m.iter().zip(b.iter_mut()) {
                if mk.iter().all(|a| a.iter().all(|v| *v == 0.0)) {
                    continue;
                }
                let mt: Vec<Vec<f64>> = mk.iter().map(|a| to_torus(a)).collect();
                for i in 0..d {
                    for j in (i + 1)..d {
                        let rhs: Vec<f64> = (0..torus.len())
                            .map(|l| {
                                let dj = (mt[i][l] - mt[i][cellsolve::shift(&torus, l, j, -1)]) / h;
                                let di = (mt[j][l] - mt[j][cellsolve::shift(&torus, l, i, -1)]) / h;
                                dj - di
                            })
                            .collect();
                        let bij = from_torus(&fft::poisson_torus(&rhs, &padded, h));
                        bk[j * d + i] = bij.iter().map(|v| -v).collect();
                        bk[i * d + j] = bij;
                    }
                }
            }
        }
    }
    Ok(DefectPotential {
        grid,
        layout,
        route,
        m,
        b,
    })
}

impl DefectPotential {
    /// Identities on faces at least `margin` cells away from the box boundary.
    pub fn identities(&self, margin: usize) -> PotentialIdentities {
        let d = self.grid.dim();
        let shape = self.grid.shape().to_vec();
        let layout = &self.layout;
        let valid = |j: usize, l: usize| {
            let mut idx = [0usize; 3];
            layout.multi_index(l, &mut idx[..d]);
            (0..d).all(|a| {
                let hi = if a == j { shape[a] } else { shape[a] - 1 };
                idx[a] <= hi && idx[a] >= margin && idx[a] + margin <= hi
            })
        };
        cellsolve::staggered_identities(layout, &self.m, &self.b, Some(&valid))
    }

    /// Cell-centered `B̃_k^{ij}` (component `(k d + i) d + j`) on the box.
    pub fn cell_potential(&self) -> GridField {
        let g = &self.grid;
        let d = g.dim();
        let n = g.len();
        let nk = self.b.len();
        let mut out = vec![0.0; nk * d * d * n];
        let mut idx = [0usize; 3];
        for k in 0..nk {
            for i in 0..d {
                for j in (i + 1)..d {
                    let b = &self.b[k][i * d + j];
                    for c in 0..n {
                        g.multi_index(c, &mut idx[..d]);
                        let base = self.layout.linear(&idx[..d]);
                        let si = self.layout.stride(i);
                        let sj = self.layout.stride(j);
                        let v = 0.25 * (b[base] + b[base + si] + b[base + sj] + b[base + si + sj]);
                        out[((k * d + i) * d + j) * n + c] = v;
                        out[((k * d + j) * d + i) * n + c] = -v;
                    }
                }
            }
        }
        GridField::new(g.clone(), Components::Tensor3, out).expect("finite potential")
    }
}

/// Increments of a field across separation scales.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GrowthProfile {
    pub scales: Vec<f64>,
    pub increments: Vec<f64>,
    /// Fitted exponent of `increments` against `scales`.
    pub exponent: f64,
}

impl GrowthProfile {
    /// `exponent <= 1 - nu + 0.1`.
    pub fn consistent_with(&self, nu: f64) -> bool {
        self.exponent <= 1.0 - nu + 0.1
    }
}

/// Sampled `max |v(x) - v(y)|` over pairs with `|x - y| = s` inside
/// `[lower, upper]`, with a log-log fit of the increments.
pub fn growth_profile(
    v: impl Fn(&[f64]) -> Option<f64>,
    lower: &[f64],
    upper: &[f64],
    scales: &[f64],
    base_points: usize,
    seed: u64,
) -> Result<GrowthProfile> {
    if scales.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "growth profile needs at least 3 scales, got {}",
            scales.len()
        )));
    }
    if scales.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::param("scales", "must be strictly increasing"));
    }
    let inc = fields::holder_growth_sample(v, lower, upper, 0.0, scales, base_points, seed)?;
    let top = inc.iter().cloned().fold(0.0, f64::max);
    let exponent = if top == 0.0 {
        0.0
    } else {
        let floor = top * 1e-300f64.max(f64::MIN_POSITIVE);
        let y: Vec<f64> = inc.iter().map(|g| g.max(floor)).collect();
        stats::loglog(scales, &y).slope
    };
    Ok(GrowthProfile {
        scales: scales.to_vec(),
        increments: inc,
        exponent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cellsolve::solve_cell;
    use crate::fields::{construct_field, FieldSpec};
    use crate::quadrature::{integrate_with, QuadOptions};

    fn solver() -> SolverOptions {
        SolverOptions::default()
    }

    #[test]
    fn support_radius_of_bump_is_near_rho() {
        let f = construct_field(&FieldSpec::new("compact-defect", 2)).unwrap();
        let r = effective_support_radius(&f);
        assert!(r > 1.2 && r < 1.5, "{r}");
        let mut x = vec![r * 0.999, 0.0];
        assert!(f.defect_scalar(&x).abs() > SUPPORT_THRESHOLD);
        x[0] = r * 1.001;
        assert!(f.defect_scalar(&x).abs() <= SUPPORT_THRESHOLD);
        assert_eq!(TruncationPlan::for_field(&f, 2.0, 8).half_width, (8.0 * r).ceil() as usize);
    }

    #[test]
    fn plan_rejects_small_box() {
        let f = construct_field(&FieldSpec::new("compact-defect", 2)).unwrap();
        assert!(matches!(
            TruncationPlan::new(4, 8).validate(&f),
            Err(Error::TruncationPlan(_))
        ));
        assert!(TruncationPlan::new(12, 8).validate(&f).is_ok());
        assert!(TruncationPlan::new(12, 2).validate(&f).is_err());
    }

    #[test]
    fn zero_defect_gives_zero_corrector() {
        let f = construct_field(&FieldSpec::new("compact-defect", 2).with("c", 0.0)).unwrap();
        let cell = solve_cell(&f, 8, FaceAveraging::Auto, &solver()).unwrap();
        let b = DefectBox::new(&f, &cell, &TruncationPlan::new(4, 8), FaceAveraging::Auto).unwrap();
        let ws = solve_defect_correctors(&f, &cell, &b, &solver()).unwrap();
        for w in &ws {
            assert_eq!(w.w.max_abs(), 0.0);
            assert!(w.stats.is_none());
        }
        let flux = defect_flux(&b, &ws);
        assert!(flux.m.iter().flatten().flatten().all(|v| *v == 0.0));
        let pot = defect_potential(&flux, PotentialRoute::Convolution).unwrap();
        assert_eq!(pot.cell_potential().max_abs(), 0.0);
    }

    #[test]
    fn box_faces_copy_torus_coefficients() {
        let f = construct_field(&FieldSpec::new("compact-defect", 2)).unwrap();
        let cell = solve_cell(&f, 8, FaceAveraging::Auto, &solver()).unwrap();
        let b = DefectBox::new(&f, &cell, &TruncationPlan::new(12, 8), FaceAveraging::Auto).unwrap();
        // far from the bump the total coefficient is the periodic one
        let tilde = b.defect_coeffs();
        let mut idx = [0usize; 2];
        for f_ in 0..fv::face_count(&b.grid, 0) {
            fv::face_multi(&b.grid, 0, f_, &mut idx);
            let x = -12.0 + idx[0] as f64 / 8.0;
            let y = -12.0 + (idx[1] as f64 + 0.5) / 8.0;
            if x.hypot(y) > 2.0 {
                assert!(tilde.get(0, 0, f_).abs() < 1e-15);
            }
        }
    }

    /// Closed form `-∫_0^z ã/(a_per + ã)` for the 1D defect on an identity
    /// background.
    fn slow_decay_primitive(f: &CoefficientField, z: f64) -> f64 {
        let g = |t: f64| {
            let a = f.defect_scalar(&[t]);
            -a / (1.0 + a)
        };
        let opts = QuadOptions {
            abs_tol: 1e-14,
            rel_tol: 1e-13,
            max_intervals: 20000,
        };
        integrate_with(g, 0.0, z, &[], opts).unwrap().value
    }

    #[test]
    fn one_dimensional_flux_route_matches_closed_form() {
        let f = construct_field(&FieldSpec::new("slow-decay", 1).with("r", 2.0)).unwrap();
        let cell = solve_cell(&f, 64, FaceAveraging::Auto, &solver()).unwrap();
        let plan = TruncationPlan::for_field(&f, 40.0, 64);
        let b = DefectBox::new(&f, &cell, &plan, FaceAveraging::Auto).unwrap();
        let ws = solve_defect_correctors(&f, &cell, &b, &solver()).unwrap();
        let set = assemble_full_corrector(&cell, Some((b.clone(), ws.clone()))).unwrap();
        assert!(set.eval(0, &[0.0]).unwrap().abs() < 1e-15);
        for z in [-20.0, -3.0, 1.0, 7.5, 30.0] {
            let got = set.eval(0, &[z]).unwrap();
            let want = slow_decay_primitive(&f, z);
            assert!((got - want).abs() < 2e-5 * want.abs().max(1.0), "{z}: {got} vs {want}");
        }
        // in one dimension the defect flux vanishes identically
        let flux = defect_flux(&b, &ws);
        assert!(flux.m[0][0].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn exact_kernel_integral_matches_quadrature() {
        let h = 0.25;
        for (cx, cy) in [(0.375, 0.0), (-0.125, 0.25), (1.0, -0.5), (2.125, 2.0)] {
            let opts = QuadOptions {
                abs_tol: 1e-13,
                rel_tol: 1e-11,
                max_intervals: 4000,
            };
            let inner = |y: f64| {
                integrate_with(
                    |x: f64| x / (2.0 * PI * (x * x + y * y)),
                    cx - 0.5 * h,
                    cx + 0.5 * h,
                    &[0.0],
                    opts,
                )
                .unwrap()
                .value
            };
            let want = integrate_with(inner, cy - 0.5 * h, cy + 0.5 * h, &[0.0], opts).unwrap().value;
            let got = kernel_cell_integral_2d(cx, cy, h);
            assert!((got - want).abs() < 1e-10, "({cx},{cy}): {got} vs {want}");
        }
        // Gauss branch agrees with the antiderivative branch at the switch
        let far = kernel_cell_integral_2d(8.5 * h, 1.0 * h, h);
        let (x1, x2, y1, y2) = (8.0 * h, 9.0 * h, 0.5 * h, 1.5 * h);
        let exact = (log_antiderivative(x2, y2) - log_antiderivative(x1, y2) - log_antiderivative(x2, y1)
            + log_antiderivative(x1, y1))
            / (2.0 * PI);
        assert!((far - exact).abs() < 1e-9 * exact.abs());
    }

    fn compact_setup(n: usize) -> (CoefficientField, PeriodicCell, DefectBox, Vec<DefectCorrector>) {
        let f = construct_field(&FieldSpec::new("compact-defect", 2)).unwrap();
        let cell = solve_cell(&f, n, FaceAveraging::Auto, &solver()).unwrap();
        let plan = TruncationPlan::for_field(&f, 0.0, n);
        let b = DefectBox::new(&f, &cell, &plan, FaceAveraging::Auto).unwrap();
        let ws = solve_defect_correctors(&f, &cell, &b, &solver()).unwrap();
        (f, cell, b, ws)
    }

    #[test]
    fn compact_defect_corrector_and_potential() {
        let (_, cell, b, ws) = compact_setup(8);
        assert!(ws[0].w.max_abs() > 1e-3);
        let flux = defect_flux(&b, &ws);
        let conv = defect_potential(&flux, PotentialRoute::Convolution).unwrap();
        let id = conv.identities(0);
        assert_eq!(id.skewness, 0.0);
        let h = b.grid.spacing();
        assert!(id.divergence <= 10.0 * h * id.m_max, "{id:?}");
        // the Poisson route agrees up to a constant near the defect
        let pois = defect_potential(&flux, PotentialRoute::Poisson).unwrap();
        let bc = conv.cell_potential();
        let bp = pois.cell_potential();
        let c0 = bc.interpolate(1, &[0.0, 0.0]).unwrap();
        let p0 = bp.interpolate(1, &[0.0, 0.0]).unwrap();
        let scale = bc.max_abs();
        for y in [[0.5, 0.25], [-1.0, 1.5], [2.0, -2.0]] {
            let a = bc.interpolate(1, &y).unwrap() - c0;
            let p = bp.interpolate(1, &y).unwrap() - p0;
            assert!((a - p).abs() < 0.05 * scale, "{y:?}: {a} vs {p}");
        }
        // normalization
        let set = assemble_full_corrector(&cell, Some((b, ws))).unwrap();
        for k in 0..2 {
            assert!(set.eval(k, &[0.0, 0.0]).unwrap().abs() < 1e-14);
        }
    }

    #[test]
    fn divergence_identity_improves_under_refinement() {
        // interior faces only, compared against the exact-identity route
        let mut errs = Vec::new();
        for n in [8, 16, 32] {
            let (_, _, b, ws) = compact_setup(n);
            let flux = defect_flux(&b, &ws);
            let c = defect_potential(&flux, PotentialRoute::Convolution).unwrap();
            let p = defect_potential(&flux, PotentialRoute::Poisson).unwrap();
            let mut diff = c.clone();
            for (bk, pk) in diff.b.iter_mut().zip(&p.b) {
                for (x, y) in bk.iter_mut().zip(pk) {
                    x.iter_mut().zip(y).for_each(|(a, b)| *a -= b);
                }
            }
            diff.m.iter_mut().flatten().flatten().for_each(|v| *v = 0.0);
            let id = diff.identities(6 * n);
            errs.push(id.divergence / c.identities(0).m_max);
        }
        // the Poisson route satisfies the discrete identity up to the truncation
        // sheet on the box boundary, which both routes share
        assert!(errs[1] < errs[0] / 1.7 && errs[2] < errs[1] / 1.7, "{errs:?}");
    }

    #[test]
    fn doubling_diagnostic_is_small_for_compact_defect() {
        let f = construct_field(&FieldSpec::new("compact-defect", 2)).unwrap();
        let cell = solve_cell(&f, 8, FaceAveraging::Auto, &solver()).unwrap();
        let plan = TruncationPlan::for_field(&f, 0.0, 8).with_doubling(Doubling::Double);
        let ch = truncation_diagnostic(&f, &cell, &plan, FaceAveraging::Auto, &solver())
            .unwrap()
            .unwrap();
        for c in ch {
            assert!(c < 0.01, "{c}");
        }
    }

    #[test]
    fn growth_of_linear_and_bounded_functions() {
        let scales: Vec<f64> = (0..6).map(|k| 2f64.powi(k)).collect();
        let lin = growth_profile(|x| Some(x[0]), &[-64.0, -64.0], &[64.0, 64.0], &scales, 64, 1).unwrap();
        assert!((lin.exponent - 1.0).abs() < 1e-12);
        let zero = growth_profile(|_| Some(0.0), &[-64.0], &[64.0], &scales, 64, 1).unwrap();
        assert_eq!(zero.exponent, 0.0);
        assert!(growth_profile(|x| Some(x[0]), &[0.0], &[1.0], &scales[..2], 8, 0).is_err());
    }

    #[test]
    fn bounded_corrector_has_small_growth_exponent() {
        let (_, cell, b, ws) = compact_setup(8);
        let mut cell = cell;
        // isolate the defect part: drop the periodic corrector
        for c in cell.correctors.iter_mut() {
            c.w = GridField::zeros(c.w.grid().clone(), Components::Scalar);
        }
        let set = assemble_full_corrector(&cell, Some((b, ws))).unwrap();
        let scales = [2.0, 4.0, 8.0];
        let g = growth_profile(|y| set.eval(0, y), &[-11.0, -11.0], &[11.0, 11.0], &scales, 400, 3).unwrap();
        assert!(g.exponent < 0.3, "{g:?}");
        assert!(g.consistent_with(1.0));
    }
}
