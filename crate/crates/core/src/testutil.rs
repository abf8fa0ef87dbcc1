use crate::linalg::{standardize, StandardizedDesign};
use crate::sim::{gaussian_instance, orthonormal_instance};

/// Gaussian design, first few coefficients nonzero, unit-norm columns.
pub fn random_design(n: usize, p: usize, seed: u64) -> StandardizedDesign {
    let beta: Vec<f64> = (0..p).map(|j| if j < 3 { 1.5 - 0.4 * j as f64 } else { 0.0 }).collect();
    let (x, y) = gaussian_instance(n, p, &beta, 1.0, seed);
    standardize(&x, &y, true).unwrap()
}

/// `X'X = I` with distinct, well separated coefficients.
pub fn orthonormal_design(n: usize, p: usize, seed: u64) -> StandardizedDesign {
    let beta: Vec<f64> = (0..p).map(|j| 3.0 * (p - j) as f64 / p as f64).collect();
    let (x, y) = orthonormal_instance(n, &beta, 0.3, seed);
    StandardizedDesign::from_centered(x, y).unwrap()
}
