//! Multi-dimensional FFTs built from one-dimensional `rustfft` plans, plus the
//! spectral torus Poisson solve and zero-padded convolution built on them.

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

/// Complex FFT over a tensor array with axis 0 varying fastest.
pub struct FftNd {
    shape: Vec<usize>,
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        FftNd {
            shape: shape.to_vec(),
            fwd: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inv: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, data: &mut [Complex64], plans: &[Arc<dyn Fft<f64>>]) {
        assert_eq!(data.len(), self.len());
        for (axis, plan) in plans.iter().enumerate() {
            let n = self.shape[axis];
            let stride: usize = self.shape[..axis].iter().product();
            if stride == 1 {
                plan.process(data);
                continue;
            }
            let block = stride * n;
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            for outer in (0..data.len()).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[base + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd);
    }

    /// Inverse transform, normalized so that `inverse(forward(x)) = x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|v| *v *= s);
    }
}

fn wavenumber_multi(shape: &[usize], mut lin: usize, out: &mut [usize]) {
    for (a, &n) in shape.iter().enumerate() {
        out[a] = lin % n;
        lin /= n;
    }
}

/// Solves `-Δ_h u = f - mean(f)` on a periodic grid with the standard
/// `(2d+1)`-point Laplacian of spacing `h`; returns the zero-mean solution.
pub fn poisson_torus(f: &[f64], shape: &[usize], h: f64) -> Vec<f64> {
    let plan = FftNd::new(shape);
    let mut data: Vec<Complex64> = f.iter().map(|v| Complex64::new(*v, 0.0)).collect();
    plan.forward(&mut data);
    let mut k = vec![0usize; shape.len()];
    for (lin, v) in data.iter_mut().enumerate() {
        wavenumber_multi(shape, lin, &mut k);
        let lambda: f64 = k
            .iter()
            .zip(shape)
            .map(|(&ki, &n)| (2.0 - 2.0 * (2.0 * PI * ki as f64 / n as f64).cos()) / (h * h))
            .sum();
        *v = if lin == 0 || lambda == 0.0 { Complex64::new(0.0, 0.0) } else { *v / lambda };
    }
    plan.inverse(&mut data);
    data.iter().map(|v| v.re).collect()
}

/// Precomputed zero-padded linear convolution on a fixed box shape:
/// `out[m] = sum_s K(m - s) in[s]` with `m, s` ranging over the box.
pub struct Convolver {
    shape: Vec<usize>,
    padded: Vec<usize>,
    plan: FftNd,
}

impl Convolver {
    pub fn new(shape: &[usize]) -> Self {
        let padded: Vec<usize> = shape.iter().map(|&n| next_fast_len(2 * n - 1)).collect();
        Convolver {
            shape: shape.to_vec(),
            plan: FftNd::new(&padded),
            padded,
        }
    }

    /// Transform of the input, zero-padded.
    pub fn transform_input(&self, input: &[f64]) -> Vec<Complex64> {
        let d = self.shape.len();
        let mut data = vec![Complex64::new(0.0, 0.0); self.plan.len()];
        let mut idx = vec![0usize; d];
        for (lin, v) in input.iter().enumerate() {
            wavenumber_multi(&self.shape, lin, &mut idx);
            data[ravel(&self.padded, &idx)] = Complex64::new(*v, 0.0);
        }
        self.plan.forward(&mut data);
        data
    }

    /// Transform of the kernel sampled at integer offsets `o`,
    /// `|o_a| < n_a`.
    pub fn transform_kernel(&self, kernel: impl Fn(&[i64]) -> f64) -> Vec<Complex64> {
        let d = self.shape.len();
        let mut data = vec![Complex64::new(0.0, 0.0); self.plan.len()];
        let mut idx = vec![0usize; d];
        let mut off = vec![0i64; d];
        for (lin, v) in data.iter_mut().enumerate() {
            wavenumber_multi(&self.padded, lin, &mut idx);
            let mut inside = true;
            for a in 0..d {
                let p = self.padded[a] as i64;
                let n = self.shape[a] as i64;
                let o = idx[a] as i64;
                // p >= 2n - 1, so [0, n) and (p - n, p) do not overlap
                if o < n {
                    off[a] = o;
                } else if o > p - n {
                    off[a] = o - p;
                } else {
                    inside = false;
                }
            }
            if inside {
                *v = Complex64::new(kernel(&off), 0.0);
            }
        }
        self.plan.forward(&mut data);
        data
    }

    /// `sum_t conv(kernel_t, input_t)` restricted to the box.
    pub fn apply_sum(&self, pairs: &[(&[Complex64], &[Complex64], f64)]) -> Vec<f64> {
        let mut acc = vec![Complex64::new(0.0, 0.0); self.plan.len()];
        for (k, x, w) in pairs {
            for ((a, p), q) in acc.iter_mut().zip(k.iter()).zip(x.iter()) {
                *a += p * q * *w;
            }
        }
        self.plan.inverse(&mut acc);
        let d = self.shape.len();
        let n: usize = self.shape.iter().product();
        let mut idx = vec![0usize; d];
        (0..n)
            .map(|lin| {
                wavenumber_multi(&self.shape, lin, &mut idx);
                acc[ravel(&self.padded, &idx)].re
            })
            .collect()
    }
}

/// Smallest `m >= n` of the form `2^a 3^b 5^c`.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

fn ravel(shape: &[usize], idx: &[usize]) -> usize {
    let mut lin = 0;
    for a in (0..shape.len()).rev() {
        lin = lin * shape[a] + idx[a];
    }
    lin
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_lengths() {
        assert_eq!(next_fast_len(2049), 2160);
        assert_eq!(next_fast_len(7), 8);
        assert_eq!(next_fast_len(1), 1);
    }

    #[test]
    fn roundtrip_3d() {
        let shape = [4, 6, 5];
        let plan = FftNd::new(&shape);
        let orig: Vec<Complex64> = (0..120)
            .map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.3).cos()))
            .collect();
        let mut d = orig.clone();
        plan.forward(&mut d);
        plan.inverse(&mut d);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn poisson_inverts_discrete_laplacian() {
        let n = 16;
        let h = 1.0 / n as f64;
        let u: Vec<f64> = (0..n * n)
            .map(|l| {
                let (i, j) = (l % n, l / n);
                ((i * j) as f64 * 0.1).sin()
            })
            .collect();
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        let at = |i: i64, j: i64| u[(i.rem_euclid(n as i64) + n as i64 * j.rem_euclid(n as i64)) as usize];
        let f: Vec<f64> = (0..n * n)
            .map(|l| {
                let (i, j) = ((l % n) as i64, (l / n) as i64);
                (4.0 * at(i, j) - at(i + 1, j) - at(i - 1, j) - at(i, j + 1) - at(i, j - 1)) / (h * h)
            })
            .collect();
        let v = poisson_torus(&f, &[n, n], h);
        for (a, b) in v.iter().zip(&u) {
            assert!((a - (b - mean)).abs() < 1e-10);
        }
    }

    #[test]
    fn convolution_matches_direct_sum() {
        let shape = [5, 4];
        let input: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).cos()).collect();
        let k = |o: &[i64]| 1.0 / (1.0 + (o[0] * o[0] + 2 * o[1] * o[1]) as f64) + 0.1 * o[0] as f64;
        let c = Convolver::new(&shape);
        let kf = c.transform_kernel(k);
        let xf = c.transform_input(&input);
        let out = c.apply_sum(&[(&kf, &xf, 1.0)]);
        for m in 0..20 {
            let (mi, mj) = ((m % 5) as i64, (m / 5) as i64);
            let mut s = 0.0;
            for (t, v) in input.iter().enumerate() {
                let (si, sj) = ((t % 5) as i64, (t / 5) as i64);
                s += k(&[mi - si, mj - sj]) * v;
            }
            assert!((out[m] - s).abs() < 1e-12, "{m}: {} vs {s}", out[m]);
        }
    }
}
