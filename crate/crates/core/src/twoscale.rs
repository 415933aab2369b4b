//! Two-scale remainder `R^ε = u^ε - u* - ε Σ_k w_{e_k}(x/ε) ∂_k u*`, the
//! source `H^ε`, the residual of the remainder equation, and field norms.
//!
//! Correctors are read on the fine grid by index: the fine grid scaled by
//! `1/ε` must sit on the corrector lattices.

use crate::bvpsolve::DirichletSolution;
use crate::cellsolve::PeriodicCell;
use crate::defectsolve::CorrectorSet;
use crate::error::{Error, Result};
use crate::fields::{CoefficientField, Components, Grid, GridField, Mat};
use crate::fv::{self, FaceCoefficients, FaceScalars};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Manufactured homogenized solution with closed-form derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Manufactured {
    /// `Π_a cos(π x_a / (2 w))`, vanishing on the boundary of `(-w, w)^d`.
    Cosine { half_width: f64 },
    /// `c + b·x + x·Q x / 2`.
    Quadratic { c: f64, b: Vec<f64>, q: Vec<f64> },
}

impl Manufactured {
    /// `(w² - x²) / (2 a)`: solves `-a u'' = 1` on `(-w, w)` with zero data.
    pub fn parabola(half_width: f64, a: f64) -> Self {
        Manufactured::Quadratic {
            c: half_width * half_width / (2.0 * a),
            b: vec![0.0],
            q: vec![-1.0 / a],
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Manufactured::Cosine { half_width } => {
                let k = PI / (2.0 * half_width);
                x.iter().map(|v| (k * v).cos()).product()
            }
            Manufactured::Quadratic { c, b, q } => {
                let d = x.len();
                let mut s = *c;
                for i in 0..d {
                    s += b[i] * x[i];
                    for j in 0..d {
                        s += 0.5 * q[i * d + j] * x[i] * x[j];
                    }
                }
                s
            }
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        match self {
            Manufactured::Cosine { half_width } => {
                let k = PI / (2.0 * half_width);
                for (a, o) in out.iter_mut().enumerate().take(d) {
                    let mut p = -k * (k * x[a]).sin();
                    for (b, v) in x.iter().enumerate() {
                        if b != a {
                            p *= (k * v).cos();
                        }
                    }
                    *o = p;
                }
            }
            Manufactured::Quadratic { b, q, .. } => {
                for i in 0..d {
                    out[i] = b[i] + (0..d).map(|j| 0.5 * (q[i * d + j] + q[j * d + i]) * x[j]).sum::<f64>();
                }
            }
        }
    }

    /// Row-major Hessian.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        match self {
            Manufactured::Cosine { half_width } => {
                let k = PI / (2.0 * half_width);
                let c: Vec<f64> = x.iter().map(|v| (k * v).cos()).collect();
                let s: Vec<f64> = x.iter().map(|v| -k * (k * v).sin()).collect();
                for i in 0..d {
                    for j in 0..d {
                        let mut p = 1.0;
                        for a in 0..d {
                            p *= if i == j && a == i {
                                -k * k * c[a]
                            } else if a == i || a == j {
                                s[a]
                            } else {
                                c[a]
                            };
                        }
                        out[i * d + j] = p;
                    }
                }
            }
            Manufactured::Quadratic { q, .. } => {
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] = 0.5 * (q[i * d + j] + q[j * d + i]);
                    }
                }
            }
        }
    }

    /// `f = -Σ a*_ij ∂_i ∂_j u*`.
    pub fn source(&self, a_star: &Mat, x: &[f64]) -> f64 {
        let d = x.len();
        let mut hs = [0.0; 9];
        self.hessian(x, &mut hs[..d * d]);
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s -= a_star.get(i, j) * hs[i * d + j];
            }
        }
        s
    }
}

/// Index map from the fine grid onto a corrector lattice.
struct LatticeMap {
    offset: Vec<i64>,
    shape: Vec<usize>,
    periodic: bool,
}

impl LatticeMap {
    fn new(target: &Grid, scaled: &Grid) -> Result<Self> {
        let offset = target
            .cell_offset(scaled)
            .ok_or_else(|| Error::InvalidGrid("fine grid scaled by 1/eps is not on the corrector lattice".into()))?;
        let map = LatticeMap {
            offset,
            shape: target.shape().to_vec(),
            periodic: target.is_periodic(),
        };
        if !map.periodic {
            for a in 0..scaled.dim() {
                let lo = map.offset[a];
                let hi = lo + scaled.shape()[a] as i64;
                if lo < 0 || hi > map.shape[a] as i64 {
                    return Err(Error::InvalidGrid(
                        "fine domain scaled by 1/eps leaves the defect box".into(),
                    ));
                }
            }
        }
        Ok(map)
    }

    /// Target multi-index of fine multi-index `m` (cells or faces).
    fn map(&self, m: &[usize], out: &mut [usize]) {
        for a in 0..m.len() {
            let t = m[a] as i64 + self.offset[a];
            out[a] = if self.periodic {
                t.rem_euclid(self.shape[a] as i64) as usize
            } else {
                t as usize
            };
        }
    }
}

/// Full correctors sampled on a fine grid.
#[derive(Clone, Debug)]
pub struct CorrectorSamples {
    pub eps: f64,
    /// `w[k]`: `w_{e_k}(x/ε)` at the fine cells.
    pub w: Vec<Vec<f64>>,
    /// `w_face[k][i]`: values on the fine faces normal to `i`.
    pub w_face: Vec<FaceScalars>,
    /// `dw_face[k][i]`: `(∂_i w_{e_k})(x/ε)` on the faces normal to `i`.
    pub dw_face: Vec<FaceScalars>,
}

impl CorrectorSamples {
    /// Cell-centered `(∇_y w_{e_k})(x/ε)` (component `i`), averaged from faces.
    pub fn cell_gradient(&self, grid: &Grid, k: usize) -> Vec<Vec<f64>> {
        let d = grid.dim();
        let n = grid.len();
        let mut idx = [0usize; 3];
        (0..d)
            .map(|i| {
                (0..n)
                    .map(|c| {
                        grid.multi_index(c, &mut idx[..d]);
                        let (fl, fu) = fv::cell_faces(grid, i, &idx[..d]);
                        0.5 * (self.dw_face[k][i][fl] + self.dw_face[k][i][fu])
                    })
                    .collect()
            })
            .collect()
    }
}

fn scaled_grid(fine: &Grid, eps: f64) -> Result<Grid> {
    let lower: Vec<f64> = fine.lower().iter().map(|v| v / eps).collect();
    Grid::new(lower, fine.shape().to_vec(), fine.spacing() / eps, false)
}

/// Reads `w_{e_k}(x/ε)`, its face values and normal face derivatives on the
/// fine grid.
pub fn sample_correctors(set: &CorrectorSet, fine: &Grid, eps: f64) -> Result<CorrectorSamples> {
    let d = fine.dim();
    if set.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: set.dim(),
        });
    }
    let scaled = scaled_grid(fine, eps)?;
    let torus = set.periodic[0].grid().clone();
    let tmap = LatticeMap::new(&torus, &scaled)?;
    let bmap = match &set.defect {
        Some((b, _)) => Some(LatticeMap::new(&b.grid, &scaled)?),
        None => None,
    };
    let n = fine.len();
    let mut w = Vec::with_capacity(d);
    let mut w_face = Vec::with_capacity(d);
    let mut dw_face = Vec::with_capacity(d);
    let mut m = [0usize; 3];
    let mut t = [0usize; 3];
    for k in 0..d {
        let per = &set.periodic[k];
        let pw = per.w.values();
        let defect = set.defect.as_ref().map(|(_, ws)| &ws[k]);
        let mut wc = vec![0.0; n];
        for (c, slot) in wc.iter_mut().enumerate() {
            fine.multi_index(c, &mut m[..d]);
            tmap.map(&m[..d], &mut t[..d]);
            let mut v = pw[torus.linear(&t[..d])];
            if let (Some(dc), Some(bm)) = (defect, &bmap) {
                bm.map(&m[..d], &mut t[..d]);
                v += dc.w.values()[dc.grid().linear(&t[..d])];
            }
            *slot = v - set.shift[k];
        }
        let mut wf = Vec::with_capacity(d);
        let mut dwf = Vec::with_capacity(d);
        for i in 0..d {
            let nf = fv::face_count(fine, i);
            let mut vals = vec![0.0; nf];
            let mut ders = vec![0.0; nf];
            for f in 0..nf {
                fv::face_multi(fine, i, f, &mut m[..d]);
                tmap.map(&m[..d], &mut t[..d]);
                let tf = fv::face_linear(&torus, i, &t[..d]);
                let mut lo = t;
                lo[i] = (t[i] + torus.shape()[i] - 1) % torus.shape()[i];
                let mut v = 0.5 * (pw[torus.linear(&t[..d])] + pw[torus.linear(&lo[..d])]);
                let mut g = per.face_grad.get(i, i, tf);
                if let (Some(dc), Some(bm)) = (defect, &bmap) {
                    bm.map(&m[..d], &mut t[..d]);
                    let bf = fv::face_linear(dc.grid(), i, &t[..d]);
                    v += dc.face_value(i, bf);
                    g += dc.face_grad.get(i, i, bf);
                }
                vals[f] = v - set.shift[k];
                ders[f] = g;
            }
            wf.push(vals);
            dwf.push(ders);
        }
        w.push(wc);
        w_face.push(wf);
        dw_face.push(dwf);
    }
    Ok(CorrectorSamples {
        eps,
        w,
        w_face,
        dw_face,
    })
}

/// Skew potential `B = B_per + B̃`, cell-centered, normalized by `B(0) = 0`.
#[derive(Clone, Debug)]
pub struct FluxPotential {
    pub periodic: GridField,
    pub defect: Option<GridField>,
    /// Subtracted per component.
    pub shift: Vec<f64>,
}

impl FluxPotential {
    /// `defect` is the cell-centered `B̃` of the defect box.
    pub fn new(cell: &PeriodicCell, defect: Option<GridField>) -> Self {
        let periodic = cell.potential.cell_potential();
        let d = periodic.grid().dim();
        let origin = vec![0.0; d];
        let shift = (0..periodic.n_components())
            .map(|c| {
                let mut s = periodic.interpolate(c, &origin).unwrap_or(0.0);
                if let Some(b) = &defect {
                    s += b.interpolate(c, &origin).unwrap_or(0.0);
                }
                s
            })
            .collect();
        FluxPotential {
            periodic,
            defect,
            shift,
        }
    }

    /// `B_k^{ij}(x/ε)` at the fine cells, component `(k d + i) d + j`.
    pub fn sample(&self, fine: &Grid, eps: f64) -> Result<Vec<Vec<f64>>> {
        let d = fine.dim();
        let scaled = scaled_grid(fine, eps)?;
        let tg = self.periodic.grid();
        let tmap = LatticeMap::new(tg, &scaled)?;
        let bmap = match &self.defect {
            Some(b) => Some(LatticeMap::new(b.grid(), &scaled)?),
            None => None,
        };
        let n = fine.len();
        let mut m = [0usize; 3];
        let mut t = [0usize; 3];
        let mut tc = vec![0usize; n];
        let mut bc = vec![0usize; n];
        for c in 0..n {
            fine.multi_index(c, &mut m[..d]);
            tmap.map(&m[..d], &mut t[..d]);
            tc[c] = tg.linear(&t[..d]);
            if let (Some(b), Some(bm)) = (&self.defect, &bmap) {
                bm.map(&m[..d], &mut t[..d]);
                bc[c] = b.grid().linear(&t[..d]);
            }
        }
        Ok((0..self.periodic.n_components())
            .map(|comp| {
                let p = self.periodic.component(comp);
                let b = self.defect.as_ref().map(|b| b.component(comp));
                (0..n)
                    .map(|c| p[tc[c]] + b.map_or(0.0, |b| b[bc[c]]) - self.shift[comp])
                    .collect()
            })
            .collect())
    }
}

/// `R^ε` with its gradient and, once assembled, `H^ε`.
#[derive(Clone, Debug)]
pub struct RemainderBundle {
    pub eps: f64,
    pub r: GridField,
    /// Cell-centered `∇R^ε`.
    pub grad_r: GridField,
    /// Normal component of `∇R^ε` on the faces.
    pub face_grad_r: FaceScalars,
    pub h: Option<GridField>,
}

/// Assembles `R^ε` at the cells and `∇R^ε` on the faces.
///
/// The face gradient differentiates the assembled field term by term:
/// `G u^ε - ∂_i u* - Σ_k (∂_i w_k)(x/ε) ∂_k u* - ε Σ_k w_k(x/ε) ∂_i ∂_k u*`,
/// with the discrete face gradients of `u^ε` and of the correctors on the
/// aligned lattices. Cell values average the two faces.
pub fn assemble_remainder(
    sol: &DirichletSolution,
    u_star: &Manufactured,
    samples: &CorrectorSamples,
) -> Result<RemainderBundle> {
    let grid = sol.grid();
    let d = grid.dim();
    let n = grid.len();
    if samples.w.len() != d || samples.w[0].len() != n {
        return Err(Error::InvalidGrid("corrector samples belong to another grid".into()));
    }
    let eps = samples.eps;
    let u = sol.u.values();
    let mut r = vec![0.0; n];
    let mut g = [0.0; 3];
    for (c, slot) in r.iter_mut().enumerate() {
        let x = grid.center(c);
        u_star.gradient(&x, &mut g[..d]);
        let corr: f64 = (0..d).map(|k| samples.w[k][c] * g[k]).sum();
        *slot = u[c] - u_star.value(&x) - eps * corr;
    }
    let h = grid.spacing();
    let mut face_grad_r = Vec::with_capacity(d);
    let mut m = [0usize; 3];
    let mut x = [0.0; 3];
    let mut hs = [0.0; 9];
    for i in 0..d {
        let nf = fv::face_count(grid, i);
        let mut out = vec![0.0; nf];
        for (f, slot) in out.iter_mut().enumerate() {
            fv::face_multi(grid, i, f, &mut m[..d]);
            for a in 0..d {
                x[a] = grid.lower()[a] + (m[a] as f64 + if a == i { 0.0 } else { 0.5 }) * h;
            }
            u_star.gradient(&x[..d], &mut g[..d]);
            u_star.hessian(&x[..d], &mut hs[..d * d]);
            let mut v = sol.face_grad.get(i, i, f) - g[i];
            for k in 0..d {
                v -= samples.dw_face[k][i][f] * g[k];
                v -= eps * samples.w_face[k][i][f] * hs[i * d + k];
            }
            *slot = v;
        }
        face_grad_r.push(out);
    }
    let mut gr = vec![0.0; d * n];
    for c in 0..n {
        grid.multi_index(c, &mut m[..d]);
        for i in 0..d {
            let (fl, fu) = fv::cell_faces(grid, i, &m[..d]);
            gr[i * n + c] = 0.5 * (face_grad_r[i][fl] + face_grad_r[i][fu]);
        }
    }
    Ok(RemainderBundle {
        eps,
        r: GridField::scalar(grid.clone(), r)?,
        grad_r: GridField::new(grid.clone(), Components::Vector, gr)?,
        face_grad_r,
        h: None,
    })
}

/// `H_i = ε Σ_{jk} (a_ij(x/ε) w_k(x/ε) - B_k^{ij}(x/ε)) ∂_j ∂_k u*` at the cells.
pub fn assemble_h(
    field: &CoefficientField,
    samples: &CorrectorSamples,
    b: &[Vec<f64>],
    u_star: &Manufactured,
    grid: &Grid,
) -> Result<GridField> {
    let d = grid.dim();
    let n = grid.len();
    if b.len() != d * d * d || b[0].len() != n {
        return Err(Error::InvalidGrid("potential samples belong to another grid".into()));
    }
    let eps = samples.eps;
    let mut out = vec![0.0; d * n];
    let mut hs = [0.0; 9];
    let mut y = [0.0; 3];
    for c in 0..n {
        let x = grid.center(c);
        u_star.hessian(&x, &mut hs[..d * d]);
        for a in 0..d {
            y[a] = x[a] / eps;
        }
        let a = field.eval_matrix(&y[..d]);
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                for k in 0..d {
                    let t = a.get(i, j) * samples.w[k][c] - b[(k * d + i) * d + j][c];
                    s += t * hs[j * d + k];
                }
            }
            out[i * n + c] = eps * s;
        }
    }
    GridField::new(grid.clone(), Components::Vector, out)
}

/// Axis-aligned subdomain `[lower, upper]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subdomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Subdomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        Subdomain { lower, upper }
    }

    /// Concentric box of relative size `fraction`.
    pub fn concentric(grid: &Grid, fraction: f64) -> Self {
        let up = grid.upper();
        let (lower, upper) = grid
            .lower()
            .iter()
            .zip(&up)
            .map(|(l, u)| {
                let c = 0.5 * (l + u);
                let w = 0.5 * (u - l) * fraction;
                (c - w, c + w)
            })
            .unzip();
        Subdomain { lower, upper }
    }

    pub fn whole(grid: &Grid) -> Self {
        Subdomain {
            lower: grid.lower().to_vec(),
            upper: grid.upper(),
        }
    }

    pub fn measure(&self) -> f64 {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).product()
    }

    fn check(&self, grid: &Grid) -> Result<()> {
        let up = grid.upper();
        let d = grid.dim();
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.lower.len(),
            });
        }
        for a in 0..d {
            if !(self.upper[a] > self.lower[a]) {
                return Err(Error::Empty("subdomain has no interior".into()));
            }
            if self.lower[a] < grid.lower()[a] - 1e-12 || self.upper[a] > up[a] + 1e-12 {
                return Err(Error::InvalidGrid("subdomain exceeds the grid".into()));
            }
        }
        Ok(())
    }

    /// Fraction of cell `c` inside the subdomain.
    fn overlap(&self, grid: &Grid, c: usize) -> f64 {
        let d = grid.dim();
        let h = grid.spacing();
        let x = grid.center(c);
        let mut w = 1.0;
        for a in 0..d {
            let lo = (x[a] - 0.5 * h).max(self.lower[a]);
            let hi = (x[a] + 0.5 * h).min(self.upper[a]);
            w *= ((hi - lo) / h).max(0.0);
        }
        w
    }
}

/// Which norm `field_norm` evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NormSpec {
    Lp { p: f64 },
    Linf,
    Holder { beta: f64 },
}

/// Pairs budget of the Hölder seminorm on the lattice and at random.
pub const HOLDER_LATTICE_PAIRS: usize = 10_000;
pub const HOLDER_RANDOM_PAIRS: usize = 10_000;

/// Norm of the pointwise Euclidean magnitude of `v` over `sub`.
///
/// `Lp` uses cells weighted by their overlap with `sub`; `Linf` samples the
/// multilinear interpolant on an `h/2` lattice covering `sub`; `Holder`
/// samples pairs of the interpolant.
pub fn field_norm(v: &GridField, norm: NormSpec, sub: &Subdomain, seed: u64) -> Result<f64> {
    let grid = v.grid();
    sub.check(grid)?;
    let nc = v.n_components();
    match norm {
        NormSpec::Lp { p } => {
            if !(p >= 1.0 && p.is_finite()) {
                return Err(Error::param("p", "must lie in [1, inf)"));
            }
            let vol = grid.cell_volume();
            let mut s = 0.0;
            for c in 0..grid.len() {
                let w = sub.overlap(grid, c);
                if w == 0.0 {
                    continue;
                }
                let m2: f64 = (0..nc).map(|k| v.component(k)[c].powi(2)).sum();
                s += w * m2.powf(0.5 * p);
            }
            Ok((s * vol).powf(1.0 / p))
        }
        NormSpec::Linf => {
            let d = grid.dim();
            let step = 0.5 * grid.spacing();
            let counts: Vec<usize> = (0..d)
                .map(|a| ((sub.upper[a] - sub.lower[a]) / step).round().max(1.0) as usize + 1)
                .collect();
            let total: usize = counts.iter().product();
            let mut x = vec![0.0; d];
            let mut best = 0.0f64;
            for lin in 0..total {
                let mut rem = lin;
                for a in 0..d {
                    let i = rem % counts[a];
                    rem /= counts[a];
                    let t = i as f64 / (counts[a] - 1) as f64;
                    x[a] = sub.lower[a] + t * (sub.upper[a] - sub.lower[a]);
                }
                best = best.max(magnitude(v, &x));
            }
            Ok(best)
        }
        NormSpec::Holder { beta } => {
            if !(beta > 0.0 && beta <= 1.0) {
                return Err(Error::param("beta", "must lie in (0, 1]"));
            }
            holder_seminorm(&|x: &[f64]| point_values(v, x), sub, beta, seed)
        }
    }
}

fn point_values(v: &GridField, x: &[f64]) -> Option<Vec<f64>> {
    (0..v.n_components()).map(|k| v.interpolate(k, x)).collect()
}

fn magnitude(v: &GridField, x: &[f64]) -> f64 {
    (0..v.n_components())
        .map(|k| v.interpolate(k, x).unwrap_or(0.0).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Sampled `sup |v(x) - v(y)| / |x - y|^β` over `sub`: all pairs of a
/// decimated lattice plus seeded random pairs.
pub fn holder_seminorm(
    v: &dyn Fn(&[f64]) -> Option<Vec<f64>>,
    sub: &Subdomain,
    beta: f64,
    seed: u64,
) -> Result<f64> {
    let d = sub.lower.len();
    // m^d points give about m^{2d}/2 pairs
    let pts_budget = ((2 * HOLDER_LATTICE_PAIRS) as f64).sqrt();
    let m = (pts_budget.powf(1.0 / d as f64).floor() as usize).max(2);
    let total = m.pow(d as u32);
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(total);
    for lin in 0..total {
        let mut rem = lin;
        let mut x = Vec::with_capacity(d);
        for a in 0..d {
            let i = rem % m;
            rem /= m;
            x.push(sub.lower[a] + (sub.upper[a] - sub.lower[a]) * i as f64 / (m - 1) as f64);
        }
        pts.push(x);
    }
    let vals: Vec<Option<Vec<f64>>> = pts.iter().map(|x| v(x)).collect();
    let quotient = |x: &[f64], y: &[f64], vx: &[f64], vy: &[f64]| {
        let dist = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if dist == 0.0 {
            return 0.0;
        }
        let dv = vx.iter().zip(vy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        dv / dist.powf(beta)
    };
    let mut best = 0.0f64;
    let mut any = false;
    for p in 0..total {
        for q in (p + 1)..total {
            if let (Some(a), Some(b)) = (&vals[p], &vals[q]) {
                best = best.max(quotient(&pts[p], &pts[q], a, b));
                any = true;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    for _ in 0..HOLDER_RANDOM_PAIRS {
        for a in 0..d {
            x[a] = rng.random_range(sub.lower[a]..=sub.upper[a]);
            // half the pairs are short-range
            let span = sub.upper[a] - sub.lower[a];
            y[a] = if rng.random_bool(0.5) {
                (x[a] + span * 0.01 * (rng.random::<f64>() - 0.5)).clamp(sub.lower[a], sub.upper[a])
            } else {
                rng.random_range(sub.lower[a]..=sub.upper[a])
            };
        }
        if let (Some(a), Some(b)) = (v(&x), v(&y)) {
            best = best.max(quotient(&x, &y, &a, &b));
            any = true;
        }
    }
    if !any {
        return Err(Error::Empty("no admissible sample pairs".into()));
    }
    Ok(best)
}

/// Discrete `L²(sub)` norm of `-div(a ∇R) - div H`, with the fine face
/// coefficients of the `u^ε` solve and `H` averaged onto faces.
pub fn residual_check(
    bundle: &RemainderBundle,
    coeffs: &FaceCoefficients,
    sub: &Subdomain,
) -> Result<f64> {
    let grid = bundle.r.grid();
    let d = grid.dim();
    let h_field = bundle
        .h
        .as_ref()
        .ok_or_else(|| Error::Unsupported("H has not been assembled".into()))?;
    let gr = fv::face_gradient(grid, bundle.r.values(), None);
    let mut flux = coeffs.flux(Some(&gr), None);
    let mut m = [0usize; 3];
    for (i, fi) in flux.iter_mut().enumerate() {
        let hi = h_field.component(i);
        for (f, slot) in fi.iter_mut().enumerate() {
            fv::face_multi(grid, i, f, &mut m[..d]);
            let k = m[i];
            let n = grid.shape()[i];
            let upper = if k < n { Some(grid.linear(&m[..d])) } else { None };
            let lower = if k > 0 {
                let mut lo = m;
                lo[i] = k - 1;
                Some(grid.linear(&lo[..d]))
            } else {
                None
            };
            let hv = match (lower, upper) {
                (Some(a), Some(b)) => 0.5 * (hi[a] + hi[b]),
                (Some(a), None) | (None, Some(a)) => hi[a],
                (None, None) => 0.0,
            };
            *slot += hv;
        }
    }
    let div = fv::divergence(grid, &flux);
    // cells whose stencil touches the boundary are excluded
    let h = grid.spacing();
    let mut s = 0.0;
    for (c, v) in div.iter().enumerate() {
        let x = grid.center(c);
        let inside = (0..d).all(|a| x[a] - 1.5 * h >= grid.lower()[a] && x[a] + 1.5 * h <= grid.upper()[a]);
        if !inside {
            continue;
        }
        let w = sub.overlap(grid, c);
        s += w * v * v;
    }
    Ok((s * grid.cell_volume()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manufactured_derivatives_match_differences() {
        let u = Manufactured::Cosine { half_width: 1.0 };
        let x = [0.3, -0.45];
        let e = 1e-5;
        let mut g = [0.0; 2];
        u.gradient(&x, &mut g);
        let mut hs = [0.0; 4];
        u.hessian(&x, &mut hs);
        for a in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[a] += e;
            xm[a] -= e;
            assert!(((u.value(&xp) - u.value(&xm)) / (2.0 * e) - g[a]).abs() < 1e-8);
            let mut gp = [0.0; 2];
            let mut gm = [0.0; 2];
            u.gradient(&xp, &mut gp);
            u.gradient(&xm, &mut gm);
            for b in 0..2 {
                assert!(((gp[b] - gm[b]) / (2.0 * e) - hs[b * 2 + a]).abs() < 1e-7);
            }
        }
        let p = Manufactured::parabola(1.0, 2.0);
        assert!(p.value(&[1.0]).abs() < 1e-15 && p.value(&[-1.0]).abs() < 1e-15);
        assert!((p.source(&Mat::scalar(1, 2.0), &[0.3]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_lp_norm() {
        let g = Grid::box_with_spacing(&[0.0, 0.0], &[1.0, 1.0], 1.0 / 16.0).unwrap();
        let v = GridField::scalar(g.clone(), vec![-3.0; g.len()]).unwrap();
        let n = field_norm(&v, NormSpec::Lp { p: 2.0 }, &Subdomain::whole(&g), 0).unwrap();
        assert!((n - 3.0).abs() < 1e-13);
        // partial cells are weighted by their overlap
        let sub = Subdomain::new(vec![0.1, 0.2], vec![0.7, 0.55]);
        let n = field_norm(&v, NormSpec::Lp { p: 1.0 }, &sub, 0).unwrap();
        assert!((n - 3.0 * 0.6 * 0.35).abs() < 1e-12);
    }

    #[test]
    fn sup_norm_of_linear_function_on_subdomain() {
        let g = Grid::box_with_spacing(&[0.0, 0.0], &[1.0, 1.0], 1.0 / 16.0).unwrap();
        let v = GridField::from_fn(g.clone(), Components::Scalar, |x, o| o[0] = x[0]);
        let sub = Subdomain::new(vec![0.25, 0.25], vec![0.75, 0.75]);
        let n = field_norm(&v, NormSpec::Linf, &sub, 0).unwrap();
        assert!((n - 0.75).abs() < 1e-12);
        let all = field_norm(&v, NormSpec::Linf, &Subdomain::whole(&g), 0).unwrap();
        assert!(all >= n);
    }

    #[test]
    fn holder_seminorm_of_square_root() {
        let g = Grid::box_with_spacing(&[0.0], &[1.0], 1.0 / 4096.0).unwrap();
        let v = GridField::from_fn(g.clone(), Components::Scalar, |x, o| o[0] = x[0].abs().sqrt());
        let s = field_norm(&v, NormSpec::Holder { beta: 0.5 }, &Subdomain::whole(&g), 7).unwrap();
        assert!((s - 1.0).abs() < 0.05, "{s}");
        assert!(field_norm(&v, NormSpec::Holder { beta: 1.5 }, &Subdomain::whole(&g), 7).is_err());
        assert!(field_norm(&v, NormSpec::Holder { beta: 0.0 }, &Subdomain::whole(&g), 7).is_err());
    }

    #[test]
    fn empty_subdomain_is_rejected() {
        let g = Grid::box_with_spacing(&[0.0], &[1.0], 1.0 / 8.0).unwrap();
        let v = GridField::zeros(g, Components::Scalar);
        let sub = Subdomain::new(vec![0.5], vec![0.5]);
        assert!(matches!(field_norm(&v, NormSpec::Linf, &sub, 0), Err(Error::Empty(_))));
    }
}
