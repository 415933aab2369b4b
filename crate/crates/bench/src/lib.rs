//! Fixtures shared by the benchmarks.

use homlab::{construct_field, CoefficientField, FieldSpec};

pub fn trig(dim: usize) -> CoefficientField {
    construct_field(&FieldSpec::new("trig", dim)).expect("trig field")
}

pub fn compact_defect(dim: usize) -> CoefficientField {
    construct_field(&FieldSpec::new("compact-defect", dim)).expect("compact-defect field")
}

/// Smooth mean-zero torus data.
pub fn torus_data(n: usize) -> Vec<f64> {
    let h = 1.0 / n as f64;
    (0..n * n)
        .map(|l| {
            let (i, j) = ((l % n) as f64 + 0.5, (l / n) as f64 + 0.5);
            (std::f64::consts::TAU * i * h).sin() * (std::f64::consts::TAU * 2.0 * j * h).cos()
        })
        .collect()
}
