use super::csr::Csr;
use nalgebra::{DMatrix, DVector};

/// Tuning knobs of the aggregation multigrid V-cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct MultigridOptions {
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    /// Scaling of the coarse correction; piecewise-constant prolongation
    /// under-corrects smooth errors.
    pub coarse_scale: f64,
    /// Levels stop coarsening once they have at most this many unknowns.
    pub coarse_size: usize,
}

impl Default for MultigridOptions {
    fn default() -> Self {
        MultigridOptions {
            pre_sweeps: 1,
            post_sweeps: 1,
            coarse_scale: 1.8,
            coarse_size: 600,
        }
    }
}

struct Level {
    a: Csr,
    diag: Vec<f64>,
    /// Aggregate of every unknown on the next coarser level.
    agg: Vec<usize>,
    n_coarse: usize,
}

/// Unsmoothed aggregation multigrid on a structured tensor grid with `2^d`
/// aggregates; Gauss–Seidel smoothing, dense LU on the coarsest level.
pub struct Multigrid {
    levels: Vec<Level>,
    coarse_lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    coarse_n: usize,
    opts: MultigridOptions,
}

fn aggregate(shape: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    let coarse: Vec<usize> = shape.iter().map(|&n| if n >= 4 { n / 2 } else { n }).collect();
    if coarse == shape {
        return None;
    }
    let total: usize = shape.iter().product();
    let mut agg = vec![0; total];
    let d = shape.len();
    let mut idx = vec![0usize; d];
    for (lin, slot) in agg.iter_mut().enumerate() {
        let mut rem = lin;
        for a in 0..d {
            idx[a] = rem % shape[a];
            rem /= shape[a];
        }
        let mut c = 0;
        for a in (0..d).rev() {
            let ci = if coarse[a] == shape[a] {
                idx[a]
            } else {
                (idx[a] / 2).min(coarse[a] - 1)
            };
            c = c * coarse[a] + ci;
        }
        *slot = c;
    }
    Some((agg, coarse))
}

impl Multigrid {
    /// Builds the hierarchy. `singular` marks operators with constant null
    /// space (periodic problems); the coarse solve then fixes the mean.
    pub fn new(a: &Csr, shape: &[usize], singular: bool, opts: MultigridOptions) -> Self {
        let mut levels = Vec::new();
        let mut current = a.clone();
        let mut shape = shape.to_vec();
        while current.n() > opts.coarse_size {
            let Some((agg, coarse_shape)) = aggregate(&shape) else {
                break;
            };
            let n_coarse = coarse_shape.iter().product();
            let next = current.galerkin(&agg, n_coarse);
            let diag = current.diagonal();
            levels.push(Level {
                a: current,
                diag,
                agg,
                n_coarse,
            });
            current = next;
            shape = coarse_shape;
        }
        let n = current.n();
        let mut dense = DMatrix::<f64>::zeros(n, n);
        let mut dmax = 0.0f64;
        for i in 0..n {
            let (c, v) = current.row(i);
            for (j, x) in c.iter().zip(v) {
                dense[(i, *j)] += x;
                if i == *j {
                    dmax = dmax.max(x.abs());
                }
            }
        }
        if singular {
            let s = dmax.max(1.0) / n as f64;
            dense.add_scalar_mut(s);
        }
        Multigrid {
            levels,
            coarse_lu: dense.lu(),
            coarse_n: n,
            opts,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len() + 1
    }

    fn smooth(level: &Level, b: &[f64], x: &mut [f64], forward: bool) {
        let n = level.a.n();
        let mut step = |i: usize| {
            let (c, v) = level.a.row(i);
            let mut s = b[i];
            for (j, a) in c.iter().zip(v) {
                s -= a * x[*j];
            }
            x[i] += s / level.diag[i];
        };
        if forward {
            (0..n).for_each(&mut step);
        } else {
            (0..n).rev().for_each(&mut step);
        }
    }

    fn cycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        if l == self.levels.len() {
            let sol = self
                .coarse_lu
                .solve(&DVector::from_column_slice(b))
                .unwrap_or_else(|| DVector::zeros(self.coarse_n));
            x.copy_from_slice(sol.as_slice());
            return;
        }
        let level = &self.levels[l];
        x.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..self.opts.pre_sweeps {
            Self::smooth(level, b, x, true);
        }
        let mut r = vec![0.0; b.len()];
        level.a.residual(b, x, &mut r);
        let mut rc = vec![0.0; level.n_coarse];
        for (i, &a) in level.agg.iter().enumerate() {
            rc[a] += r[i];
        }
        let mut ec = vec![0.0; level.n_coarse];
        self.cycle(l + 1, &rc, &mut ec);
        let s = self.opts.coarse_scale;
        for (i, &a) in level.agg.iter().enumerate() {
            x[i] += s * ec[a];
        }
        for _ in 0..self.opts.post_sweeps {
            Self::smooth(level, b, x, false);
        }
    }

    /// One V-cycle from a zero initial guess: `z ≈ A^{-1} r`.
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        self.cycle(0, r, z);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregation_handles_odd_sizes() {
        let (agg, coarse) = aggregate(&[5, 4]).unwrap();
        assert_eq!(coarse, vec![2, 2]);
        assert_eq!(agg[4], 1);
        assert_eq!(agg[5 * 3 + 4], 3);
        assert!(aggregate(&[3]).is_none());
    }
}
