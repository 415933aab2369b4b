//! Numerical laboratory for elliptic homogenization in periodic media with
//! localized defects: periodic and defect correctors, flux potentials,
//! Dirichlet solvers, two-scale remainders and rate verification.

// `!(x > 0.0)` is used on purpose so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bvpsolve;
pub mod cellsolve;
pub mod defectsolve;
pub mod error;
pub mod fft;
pub mod fields;
pub mod pipeline;
pub mod quadrature;
pub mod stats;
pub mod twoscale;
pub mod verify;

pub use error::{Error, Result};
pub use fields::{construct_field, CoefficientField, FieldSpec, Grid, GridField, Mat};
pub mod fv;
pub mod linalg;
