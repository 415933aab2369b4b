use super::csr::{dot, norm2, Csr};
use super::multigrid::{Multigrid, MultigridOptions};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// CG for symmetric matrices, BiCGStab otherwise.
    Auto,
    Cg,
    BiCgStab,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precond {
    None,
    Jacobi,
    Multigrid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverOptions {
    /// Relative residual tolerance `|b - Ax| / |b|`.
    pub tol: f64,
    /// Iteration cap; `None` means `min(50 N, 20000)`.
    pub max_iter: Option<usize>,
    pub method: Method,
    pub precond: Precond,
    pub multigrid: MultigridOptions,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-10,
            max_iter: None,
            method: Method::Auto,
            precond: Precond::Multigrid,
            multigrid: MultigridOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

enum Prec {
    Identity,
    Jacobi(Vec<f64>),
    Mg(Multigrid),
}

impl Prec {
    fn apply(&self, r: &[f64], z: &mut [f64], singular: bool) {
        match self {
            Prec::Identity => z.copy_from_slice(r),
            Prec::Jacobi(d) => z.iter_mut().zip(r.iter().zip(d)).for_each(|(z, (r, d))| *z = r / d),
            Prec::Mg(mg) => mg.apply(r, z),
        }
        if singular {
            remove_mean(z);
        }
    }
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += alpha * x);
}

/// Solves `A x = b` with `x` as initial guess.
///
/// `shape` is the structured-grid layout of the unknowns (needed by the
/// multigrid preconditioner). For `singular` (periodic) problems the right-hand
/// side is projected onto mean-zero vectors and the mean-zero solution returned.
pub fn solve(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    shape: &[usize],
    singular: bool,
    opts: &SolverOptions,
) -> Result<SolveStats> {
    let n = a.n();
    assert_eq!(b.len(), n);
    assert_eq!(x.len(), n);
    let mut rhs = b.to_vec();
    if singular {
        remove_mean(&mut rhs);
    }
    let bnorm = norm2(&rhs);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let cap = opts.max_iter.unwrap_or((50 * n).min(20_000)).max(1);
    let prec = match opts.precond {
        Precond::None => Prec::Identity,
        Precond::Jacobi => Prec::Jacobi(a.diagonal()),
        Precond::Multigrid => Prec::Mg(Multigrid::new(a, shape, singular, opts.multigrid.clone())),
    };
    let method = match opts.method {
        Method::Auto => {
            let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if a.asymmetry() <= 1e-12 * scale {
                Method::Cg
            } else {
                Method::BiCgStab
            }
        }
        m => m,
    };
    let stats = match method {
        Method::Cg => cg(a, &rhs, x, &prec, singular, opts.tol, bnorm, cap),
        _ => bicgstab(a, &rhs, x, &prec, singular, opts.tol, bnorm, cap),
    };
    if singular {
        remove_mean(x);
    }
    if stats.residual <= opts.tol {
        Ok(stats)
    } else {
        Err(Error::NotConverged {
            iterations: stats.iterations,
            residual: stats.residual,
            tol: opts.tol,
        })
    }
}

#[allow(clippy::too_many_arguments)]
fn cg(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    prec: &Prec,
    singular: bool,
    tol: f64,
    bnorm: f64,
    cap: usize,
) -> SolveStats {
    let n = b.len();
    let mut r = vec![0.0; n];
    a.residual(b, x, &mut r);
    let mut res = norm2(&r) / bnorm;
    if res <= tol {
        return SolveStats {
            iterations: 0,
            residual: res,
        };
    }
    let mut z = vec![0.0; n];
    prec.apply(&r, &mut z, singular);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=cap {
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap == 0.0 || !pap.is_finite() {
            return SolveStats {
                iterations: it,
                residual: res,
            };
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        res = norm2(&r) / bnorm;
        if res <= tol {
            // guard against drift of the recursive residual
            a.residual(b, x, &mut r);
            res = norm2(&r) / bnorm;
            if res <= tol {
                return SolveStats {
                    iterations: it,
                    residual: res,
                };
            }
        }
        prec.apply(&r, &mut z, singular);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        p.iter_mut().zip(&z).for_each(|(p, z)| *p = z + beta * *p);
    }
    SolveStats {
        iterations: cap,
        residual: res,
    }
}

#[allow(clippy::too_many_arguments)]
fn bicgstab(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    prec: &Prec,
    singular: bool,
    tol: f64,
    bnorm: f64,
    cap: usize,
) -> SolveStats {
    let n = b.len();
    let mut r = vec![0.0; n];
    a.residual(b, x, &mut r);
    let mut res = norm2(&r) / bnorm;
    if res <= tol {
        return SolveStats {
            iterations: 0,
            residual: res,
        };
    }
    let mut rhat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 1..=cap {
        let rho_new = dot(&rhat, &r);
        if rho_new.abs() < 1e-300 {
            rhat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        prec.apply(&p, &mut phat, singular);
        a.matvec(&phat, &mut v);
        let rv = dot(&rhat, &v);
        if rv == 0.0 || !rv.is_finite() {
            rhat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
            continue;
        }
        alpha = rho / rv;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / bnorm <= tol {
            axpy(alpha, &phat, x);
            a.residual(b, x, &mut r);
            res = norm2(&r) / bnorm;
            if res <= tol {
                return SolveStats {
                    iterations: it,
                    residual: res,
                };
            }
            continue;
        }
        prec.apply(&s, &mut shat, singular);
        a.matvec(&shat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        axpy(alpha, &phat, x);
        axpy(omega, &shat, x);
        for i in 0..n {
            r[i] = s[i] - omega * t[i];
        }
        res = norm2(&r) / bnorm;
        if res <= tol {
            a.residual(b, x, &mut r);
            res = norm2(&r) / bnorm;
            if res <= tol {
                return SolveStats {
                    iterations: it,
                    residual: res,
                };
            }
        }
        if omega == 0.0 {
            rhat.copy_from_slice(&r);
            rho = 1.0;
            alpha = 1.0;
            omega = 1.0;
            v.iter_mut().for_each(|e| *e = 0.0);
            p.iter_mut().for_each(|e| *e = 0.0);
        }
    }
    SolveStats {
        iterations: cap,
        residual: res,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CsrBuilder;

    /// 5-point Laplacian on an `n x n` grid, Dirichlet or periodic.
    pub(crate) fn lap2d(n: usize, periodic: bool, shift: f64) -> Csr {
        let mut b = CsrBuilder::new(n * n, 5 * n * n);
        for j in 0..n {
            for i in 0..n {
                let c = i + n * j;
                let mut row = vec![(c, 4.0 + shift)];
                let nb = |ii: i64, jj: i64| -> Option<usize> {
                    let (ii, jj) = if periodic {
                        (ii.rem_euclid(n as i64), jj.rem_euclid(n as i64))
                    } else if ii < 0 || jj < 0 || ii >= n as i64 || jj >= n as i64 {
                        return None;
                    } else {
                        (ii, jj)
                    };
                    Some(ii as usize + n * jj as usize)
                };
                for (di, dj) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    if let Some(k) = nb(i as i64 + di, j as i64 + dj) {
                        row.push((k, -1.0));
                    }
                }
                b.push_row(row);
            }
        }
        b.finish()
    }

    #[test]
    fn all_preconditioners_agree() {
        let n = 40;
        let a = lap2d(n, false, 0.0);
        let b: Vec<f64> = (0..n * n).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let mut sols = Vec::new();
        for precond in [Precond::None, Precond::Jacobi, Precond::Multigrid] {
            for method in [Method::Cg, Method::BiCgStab] {
                let opts = SolverOptions {
                    precond: precond.clone(),
                    method,
                    ..SolverOptions::default()
                };
                let mut x = vec![0.0; n * n];
                solve(&a, &b, &mut x, &[n, n], false, &opts).unwrap();
                sols.push(x);
            }
        }
        for s in &sols[1..] {
            let diff = s.iter().zip(&sols[0]).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
            assert!(diff < 1e-7, "{diff}");
        }
    }

    #[test]
    fn periodic_singular_system() {
        let n = 32;
        let a = lap2d(n, true, 0.0);
        let b: Vec<f64> = (0..n * n).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut x = vec![0.0; n * n];
        solve(&a, &b, &mut x, &[n, n], true, &SolverOptions::default()).unwrap();
        assert!(x.iter().sum::<f64>().abs() < 1e-9);
        let mean = b.iter().sum::<f64>() / b.len() as f64;
        let mut r = vec![0.0; n * n];
        a.matvec(&x, &mut r);
        let err = r.iter().zip(&b).fold(0.0f64, |m, (p, q)| m.max((p - (q - mean)).abs()));
        assert!(err < 1e-8);
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let n = 32;
        let a = lap2d(n, false, 0.0);
        let b = vec![1.0; n * n];
        let mut x = vec![0.0; n * n];
        let opts = SolverOptions {
            max_iter: Some(1),
            ..SolverOptions::default()
        };
        let e = solve(&a, &b, &mut x, &[n, n], false, &opts).unwrap_err();
        assert!(e.is_non_convergence());
    }

    #[test]
    fn multigrid_iterations_are_mesh_robust_enough() {
        let mut its = Vec::new();
        for n in [64, 256] {
            let a = lap2d(n, false, 0.0);
            let b = vec![1.0; n * n];
            let mut x = vec![0.0; n * n];
            let st = solve(&a, &b, &mut x, &[n, n], false, &SolverOptions::default()).unwrap();
            its.push(st.iterations);
        }
        assert!(its[1] < 4 * its[0].max(10), "{its:?}");
    }
}
