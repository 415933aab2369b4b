use crate::error::{Error, Result};
use serde::Serialize;

/// Uniform tensor-product grid of cubic cells with spacing `h`.
///
/// Cells are indexed with axis 0 varying fastest. Values live at cell centers
/// `lower + (i + 1/2) h`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grid {
    dim: usize,
    shape: Vec<usize>,
    lower: Vec<f64>,
    spacing: f64,
    periodic: bool,
}

pub const MIN_RESOLUTION: usize = 4;

impl Grid {
    pub fn new(lower: Vec<f64>, shape: Vec<usize>, spacing: f64, periodic: bool) -> Result<Self> {
        let dim = shape.len();
        if !(1..=3).contains(&dim) || lower.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "dimension {dim} with {} lower corners",
                lower.len()
            )));
        }
        if let Some(n) = shape.iter().find(|&&n| n < MIN_RESOLUTION) {
            return Err(Error::InvalidGrid(format!(
                "resolution {n} below the minimum of {MIN_RESOLUTION} cells per axis"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidGrid(format!("spacing {spacing}")));
        }
        Ok(Grid {
            dim,
            shape,
            lower,
            spacing,
            periodic,
        })
    }

    /// Unit torus `[0,1)^d` with `n` cells per axis.
    pub fn torus(dim: usize, n: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![n; dim], 1.0 / n as f64, true)
    }

    /// Box `[lower, upper]` with spacing `h`, which must divide every side exactly.
    pub fn box_with_spacing(lower: &[f64], upper: &[f64], h: f64) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        let mut shape = Vec::with_capacity(lower.len());
        for (lo, hi) in lower.iter().zip(upper) {
            let extent = hi - lo;
            let n = (extent / h).round();
            if n < 1.0 || (n * h - extent).abs() > 1e-9 * extent.abs().max(1.0) {
                return Err(Error::InvalidGrid(format!(
                    "spacing {h} does not divide extent {extent}"
                )));
            }
            shape.push(n as usize);
        }
        Self::new(lower.to_vec(), shape, h, false)
    }

    /// Box `(-half_width, half_width)^d` with spacing `h`.
    pub fn centered_box(dim: usize, half_width: f64, h: f64) -> Result<Self> {
        Self::box_with_spacing(&vec![-half_width; dim], &vec![half_width; dim], h)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.shape)
            .map(|(lo, n)| lo + *n as f64 * self.spacing)
            .collect()
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.shape[..axis].iter().product()
    }

    #[inline]
    pub fn linear(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for a in (0..self.dim).rev() {
            lin = lin * self.shape[a] + idx[a];
        }
        lin
    }

    /// Linear index for a possibly out-of-range multi-index; wraps on periodic grids.
    #[inline]
    pub fn linear_signed(&self, idx: &[i64]) -> Option<usize> {
        let mut lin = 0usize;
        for a in (0..self.dim).rev() {
            let n = self.shape[a] as i64;
            let mut i = idx[a];
            if self.periodic {
                i = i.rem_euclid(n);
            } else if i < 0 || i >= n {
                return None;
            }
            lin = lin * self.shape[a] + i as usize;
        }
        Some(lin)
    }

    #[inline]
    pub fn multi_index(&self, mut lin: usize, out: &mut [usize]) {
        for a in 0..self.dim {
            out[a] = lin % self.shape[a];
            lin /= self.shape[a];
        }
    }

    #[inline]
    pub fn center_into(&self, idx: &[usize], out: &mut [f64]) {
        for a in 0..self.dim {
            out[a] = self.lower[a] + (idx[a] as f64 + 0.5) * self.spacing;
        }
    }

    pub fn center(&self, lin: usize) -> Vec<f64> {
        let mut idx = [0usize; 3];
        self.multi_index(lin, &mut idx[..self.dim]);
        let mut x = vec![0.0; self.dim];
        self.center_into(&idx[..self.dim], &mut x);
        x
    }

    /// Iterate over all cell centers in linear order.
    pub fn centers(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |c| self.center(c))
    }

    /// Integer cell offsets `o` with `center_other(j) = center_self(j + o)`
    /// when both grids share the spacing and their lattices are aligned.
    pub fn cell_offset(&self, other: &Grid) -> Option<Vec<i64>> {
        if self.dim != other.dim || (self.spacing - other.spacing).abs() > 1e-12 * self.spacing {
            return None;
        }
        let mut out = Vec::with_capacity(self.dim);
        for a in 0..self.dim {
            let q = (other.lower[a] - self.lower[a]) / self.spacing;
            let r = q.round();
            if (q - r).abs() > 1e-6 {
                return None;
            }
            out.push(r as i64);
        }
        Some(out)
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if self.periodic {
            return true;
        }
        let up = self.upper();
        x.iter()
            .zip(self.lower.iter().zip(&up))
            .all(|(xi, (lo, hi))| *xi >= *lo - 1e-12 && *xi <= *hi + 1e-12)
    }
}

/// Shape of the values carried at each cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Components {
    Scalar,
    Vector,
    Matrix,
    Tensor3,
}

impl Components {
    pub fn count(self, dim: usize) -> usize {
        match self {
            Components::Scalar => 1,
            Components::Vector => dim,
            Components::Matrix => dim * dim,
            Components::Tensor3 => dim * dim * dim,
        }
    }
}

/// Anything that can be evaluated at a point of `R^d`.
pub trait PointField: Sync {
    fn dim(&self) -> usize;
    fn components(&self) -> usize;
    /// Writes the component values at `x`; returns false when `x` is outside the domain.
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> bool;
}

/// Adapter turning a closure into a [`PointField`].
pub struct FnField<F> {
    pub dim: usize,
    pub components: usize,
    pub f: F,
}

impl<F> PointField for FnField<F>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn components(&self) -> usize {
        self.components
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        (self.f)(x, out);
        true
    }
}

/// Sampled field on a grid, stored component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: Grid,
    components: Components,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(grid: Grid, components: Components, values: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * components.count(grid.dim());
        if values.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "value array has {} entries, expected {expected}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-finite value at entry {i}")));
        }
        Ok(GridField {
            grid,
            components,
            values,
        })
    }

    pub fn zeros(grid: Grid, components: Components) -> Self {
        let n = grid.len() * components.count(grid.dim());
        GridField {
            grid,
            components,
            values: vec![0.0; n],
        }
    }

    /// Scalar field from per-cell values.
    pub fn scalar(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, Components::Scalar, values)
    }

    /// Sample `f` at every cell center.
    pub fn from_fn(grid: Grid, components: Components, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let nc = components.count(grid.dim());
        let n = grid.len();
        let mut values = vec![0.0; n * nc];
        let mut buf = vec![0.0; nc];
        let mut idx = [0usize; 3];
        let mut x = [0.0f64; 3];
        let d = grid.dim();
        for c in 0..n {
            grid.multi_index(c, &mut idx[..d]);
            grid.center_into(&idx[..d], &mut x[..d]);
            f(&x[..d], &mut buf);
            for (k, v) in buf.iter().enumerate() {
                values[k * n + c] = *v;
            }
        }
        GridField {
            grid,
            components,
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn component_shape(&self) -> Components {
        self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.count(self.grid.dim())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn component(&self, k: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn component_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.grid.len();
        &mut self.values[k * n..(k + 1) * n]
    }

    /// Euclidean norm of the component vector at each cell.
    pub fn pointwise_norm(&self) -> Vec<f64> {
        let n = self.grid.len();
        let nc = self.n_components();
        (0..n)
            .map(|c| {
                (0..nc)
                    .map(|k| self.values[k * n + c].powi(2))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Multilinear interpolation of component `k` at `x`.
    ///
    /// Periodic grids wrap; box grids extrapolate linearly within the outer half
    /// cell and return `None` outside the box.
    pub fn interpolate(&self, k: usize, x: &[f64]) -> Option<f64> {
        let g = &self.grid;
        if !g.contains(x) {
            return None;
        }
        let d = g.dim();
        let h = g.spacing();
        let comp = self.component(k);
        let mut base = [0i64; 3];
        let mut t = [0.0f64; 3];
        for a in 0..d {
            let s = (x[a] - g.lower[a]) / h - 0.5;
            let n = g.shape[a] as i64;
            let mut i0 = s.floor() as i64;
            if !g.periodic {
                i0 = i0.clamp(0, n - 2);
            }
            base[a] = i0;
            t[a] = s - i0 as f64;
        }
        let mut acc = 0.0;
        let mut idx = [0i64; 3];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for a in 0..d {
                let bit = (corner >> a) & 1;
                idx[a] = base[a] + bit as i64;
                w *= if bit == 1 { t[a] } else { 1.0 - t[a] };
            }
            if w == 0.0 {
                continue;
            }
            let lin = g.linear_signed(&idx[..d])?;
            acc += w * comp[lin];
        }
        Some(acc)
    }

    /// Cell-centered gradient of a scalar field: centered differences inside,
    /// second-order one-sided differences at box boundaries, wrap-around on tori.
    pub fn gradient(&self) -> Result<GridField> {
        if self.components != Components::Scalar {
            return Err(Error::Unsupported("gradient of a non-scalar field".into()));
        }
        let g = &self.grid;
        let d = g.dim();
        let n = g.len();
        let h = g.spacing();
        let u = &self.values;
        let mut out = vec![0.0; n * d];
        let mut idx = [0usize; 3];
        for c in 0..n {
            g.multi_index(c, &mut idx[..d]);
            for a in 0..d {
                let s = g.stride(a);
                let na = g.shape[a];
                let i = idx[a];
                let v = if g.periodic {
                    let up = if i + 1 == na { c - (na - 1) * s } else { c + s };
                    let dn = if i == 0 { c + (na - 1) * s } else { c - s };
                    (u[up] - u[dn]) / (2.0 * h)
                } else if i == 0 {
                    (-3.0 * u[c] + 4.0 * u[c + s] - u[c + 2 * s]) / (2.0 * h)
                } else if i + 1 == na {
                    (3.0 * u[c] - 4.0 * u[c - s] + u[c - 2 * s]) / (2.0 * h)
                } else {
                    (u[c + s] - u[c - s]) / (2.0 * h)
                };
                out[a * n + c] = v;
            }
        }
        GridField::new(g.clone(), Components::Vector, out)
    }
}

impl PointField for GridField {
    fn dim(&self) -> usize {
        self.grid.dim()
    }
    fn components(&self) -> usize {
        self.n_components()
    }
    fn eval_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        for (k, o) in out.iter_mut().enumerate() {
            match self.interpolate(k, x) {
                Some(v) => *o = v,
                None => return false,
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spacing_must_divide_extent() {
        assert!(Grid::box_with_spacing(&[0.0], &[1.0], 0.3).is_err());
        let g = Grid::box_with_spacing(&[0.0, 0.0], &[1.0, 2.0], 0.25).unwrap();
        assert_eq!(g.shape(), &[4, 8]);
        assert!(Grid::torus(2, 3).is_err());
    }

    #[test]
    fn value_length_checked() {
        let g = Grid::torus(2, 4).unwrap();
        assert!(GridField::new(g.clone(), Components::Vector, vec![0.0; 16]).is_err());
        assert!(GridField::new(g.clone(), Components::Vector, vec![0.0; 32]).is_ok());
        let mut bad = vec![0.0; 16];
        bad[3] = f64::NAN;
        assert!(GridField::scalar(g, bad).is_err());
    }

    #[test]
    fn gradient_of_linear_function_is_exact_in_box() {
        let g = Grid::centered_box(2, 1.0, 0.125).unwrap();
        let f = GridField::from_fn(g, Components::Scalar, |x, o| o[0] = 2.0 * x[0] - x[1]);
        let gr = f.gradient().unwrap();
        assert!(gr.component(0).iter().all(|v| (v - 2.0).abs() < 1e-12));
        assert!(gr.component(1).iter().all(|v| (v + 1.0).abs() < 1e-12));
    }

    #[test]
    fn periodic_gradient_wraps() {
        let g = Grid::torus(1, 256).unwrap();
        let f = GridField::from_fn(g, Components::Scalar, |x, o| {
            o[0] = (2.0 * std::f64::consts::PI * x[0]).sin()
        });
        let gr = f.gradient().unwrap();
        let x0 = gr.grid().center(0)[0];
        let exact = 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI * x0).cos();
        assert!((gr.component(0)[0] - exact).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn interpolation_reproduces_affine_functions(x in -0.99f64..0.99, y in -0.99f64..0.99) {
            let g = Grid::centered_box(2, 1.0, 0.25).unwrap();
            let f = GridField::from_fn(g, Components::Scalar, |p, o| o[0] = 1.0 + 3.0 * p[0] - 0.5 * p[1]);
            let v = f.interpolate(0, &[x, y]).unwrap();
            prop_assert!((v - (1.0 + 3.0 * x - 0.5 * y)).abs() < 1e-12);
        }
    }
}
