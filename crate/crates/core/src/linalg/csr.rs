use rayon::prelude::*;

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Row-by-row CSR assembly; duplicate columns within a row are summed.
pub struct CsrBuilder {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    scratch: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize, nnz_hint: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        CsrBuilder {
            n,
            row_ptr,
            cols: Vec::with_capacity(nnz_hint),
            vals: Vec::with_capacity(nnz_hint),
            scratch: Vec::new(),
        }
    }

    /// Appends the next row from unsorted `(column, value)` contributions.
    pub fn push_row(&mut self, entries: impl IntoIterator<Item = (usize, f64)>) {
        self.scratch.clear();
        self.scratch.extend(entries);
        self.scratch.sort_unstable_by_key(|e| e.0);
        let mut last = usize::MAX;
        for &(c, v) in &self.scratch {
            debug_assert!(c < self.n);
            if c == last {
                *self.vals.last_mut().unwrap() += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
                last = c;
            }
        }
        self.row_ptr.push(self.cols.len());
    }

    pub fn finish(self) -> Csr {
        assert_eq!(self.row_ptr.len(), self.n + 1, "row count mismatch");
        Csr {
            n: self.n,
            row_ptr: self.row_ptr,
            cols: self.cols,
            vals: self.vals,
        }
    }
}

const CHUNK: usize = 4096;

impl Csr {
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (s, e) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.cols[s..e], &self.vals[s..e])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().position(|&j| j == i).map_or(0.0, |k| v[k])
            })
            .collect()
    }

    #[inline]
    fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        let (c, v) = self.row(i);
        c.iter().zip(v).map(|(j, a)| a * x[*j]).sum()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(CHUNK).enumerate().for_each(|(k, ch)| {
            let base = k * CHUNK;
            for (o, yi) in ch.iter_mut().enumerate() {
                *yi = self.row_dot(base + o, x);
            }
        });
    }

    /// `r = b - A x`.
    pub fn residual(&self, b: &[f64], x: &[f64], r: &mut [f64]) {
        r.par_chunks_mut(CHUNK).enumerate().for_each(|(k, ch)| {
            let base = k * CHUNK;
            for (o, ri) in ch.iter_mut().enumerate() {
                *ri = b[base + o] - self.row_dot(base + o, x);
            }
        });
    }

    pub fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.n + 1];
        for &c in &self.cols {
            counts[c + 1] += 1;
        }
        for i in 0..self.n {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (j, a) in c.iter().zip(v) {
                let p = next[*j];
                cols[p] = i;
                vals[p] = *a;
                next[*j] += 1;
            }
        }
        Csr {
            n: self.n,
            row_ptr: counts,
            cols,
            vals,
        }
    }

    /// Largest entrywise asymmetry `max |A_ij - A_ji|`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut worst = 0.0f64;
        for i in 0..self.n {
            let (c1, v1) = self.row(i);
            let (c2, v2) = t.row(i);
            let (mut p, mut q) = (0, 0);
            while p < c1.len() || q < c2.len() {
                let a = c1.get(p).copied().unwrap_or(usize::MAX);
                let b = c2.get(q).copied().unwrap_or(usize::MAX);
                if a == b {
                    worst = worst.max((v1[p] - v2[q]).abs());
                    p += 1;
                    q += 1;
                } else if a < b {
                    worst = worst.max(v1[p].abs());
                    p += 1;
                } else {
                    worst = worst.max(v2[q].abs());
                    q += 1;
                }
            }
        }
        worst
    }

    /// Galerkin product `P^T A P` for a piecewise-constant prolongation given
    /// by the aggregate index of every fine unknown.
    pub fn galerkin(&self, agg: &[usize], n_coarse: usize) -> Csr {
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_coarse];
        for (i, &a) in agg.iter().enumerate() {
            members[a].push(i);
        }
        let rows: Vec<Vec<(usize, f64)>> = members
            .par_iter()
            .map(|fine| {
                let mut acc: Vec<(usize, f64)> = Vec::new();
                for &i in fine {
                    let (c, v) = self.row(i);
                    for (j, a) in c.iter().zip(v) {
                        acc.push((agg[*j], *a));
                    }
                }
                acc
            })
            .collect();
        let mut b = CsrBuilder::new(n_coarse, rows.iter().map(|r| r.len()).sum());
        for r in rows {
            b.push_row(r);
        }
        b.finish()
    }
}

/// Deterministic dot product: fixed-size chunks summed in order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(CHUNK)
        .zip(b.par_chunks(CHUNK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lap1d(n: usize) -> Csr {
        let mut b = CsrBuilder::new(n, 3 * n);
        for i in 0..n {
            let mut row = vec![(i, 2.0)];
            if i > 0 {
                row.push((i - 1, -1.0));
            }
            if i + 1 < n {
                row.push((i + 1, -1.0));
            }
            b.push_row(row);
        }
        b.finish()
    }

    #[test]
    fn duplicates_are_summed() {
        let mut b = CsrBuilder::new(2, 4);
        b.push_row([(1, 1.0), (0, 2.0), (1, 3.0)]);
        b.push_row([(0, -1.0)]);
        let a = b.finish();
        assert_eq!(a.row(0), (&[0usize, 1][..], &[2.0, 4.0][..]));
        let mut y = [0.0; 2];
        a.matvec(&[1.0, 1.0], &mut y);
        assert_eq!(y, [6.0, -1.0]);
        assert_eq!(a.asymmetry(), 5.0);
    }

    #[test]
    fn galerkin_of_laplacian() {
        let a = lap1d(4);
        let c = a.galerkin(&[0, 0, 1, 1], 2);
        assert_eq!(c.row(0), (&[0usize, 1][..], &[2.0, -1.0][..]));
        assert_eq!(c.row(1), (&[0usize, 1][..], &[-1.0, 2.0][..]));
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn dot_is_order_stable() {
        let a: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let seq: f64 = a
            .chunks(CHUNK)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>())
            .sum();
        assert_eq!(dot(&a, &a), seq);
    }
}
