use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use homlab::bvpsolve::{solve_dirichlet, Coefficient, DirichletProblem};
use homlab::cellsolve::{periodic_face_coefficients, solve_cell};
use homlab::fft::poisson_torus;
use homlab::fv::{self, FaceAveraging};
use homlab::linalg::SolverOptions;
use homlab::verify::{rate_fit, RateModel};
use homlab::Grid;
use homlab_bench::{compact_defect, torus_data, trig};
use std::hint::black_box;

fn cell_problem(c: &mut Criterion) {
    let field = trig(2);
    let opts = SolverOptions::default();
    let mut g = c.benchmark_group("solve_cell_trig2d");
    g.sample_size(10);
    for n in [32usize, 64, 128] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| solve_cell(&field, n, FaceAveraging::Auto, &opts).unwrap())
        });
    }
    g.finish();
}

fn assembly(c: &mut Criterion) {
    let field = trig(2);
    let grid = Grid::torus(2, 256).unwrap();
    let coeffs = periodic_face_coefficients(&field, &grid, FaceAveraging::Auto);
    c.bench_function("fv_assemble_torus_256", |b| b.iter(|| fv::assemble(black_box(&coeffs))));
}

fn dirichlet(c: &mut Criterion) {
    let field = compact_defect(2);
    let opts = SolverOptions::default();
    let mut g = c.benchmark_group("dirichlet_compact_defect");
    g.sample_size(10);
    for eps in [0.125, 0.0625] {
        let grid = Grid::centered_box(2, 1.0, eps / 8.0).unwrap();
        let rhs = vec![1.0; grid.len()];
        g.bench_with_input(BenchmarkId::from_parameter(eps), &eps, |b, &eps| {
            b.iter(|| {
                let p = DirichletProblem::new(grid.clone(), Coefficient::Oscillatory { field: &field, eps }, rhs.clone());
                solve_dirichlet(&p, &opts).unwrap()
            })
        });
    }
    g.finish();
}

fn spectral(c: &mut Criterion) {
    let n = 512;
    let f = torus_data(n);
    c.bench_function("poisson_torus_512", |b| b.iter(|| poisson_torus(black_box(&f), &[n, n], 1.0 / n as f64)));
}

fn fitting(c: &mut Criterion) {
    let eps: Vec<f64> = (2..=12).map(|k| 2f64.powi(-k)).collect();
    let vals: Vec<f64> = eps.iter().map(|e| 3.0 * e.sqrt()).collect();
    c.bench_function("rate_fit_11", |b| b.iter(|| rate_fit(black_box(&eps), black_box(&vals), RateModel::Log).unwrap()));
}

criterion_group!(benches, cell_problem, assembly, dirichlet, spectral, fitting);
criterion_main!(benches);
