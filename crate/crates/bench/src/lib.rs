//! Shared fixtures for the criterion benchmarks.

use cdwce_core::numeric::{Mat2, Rng};

/// `(rows, cols)` matrix of standard normal draws.
pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Mat2 {
    let mut rng = Rng::new(seed);
    Mat2::from_shape_fn((rows, cols), |_| rng.normal())
}

/// Labels cycling through `0..n_classes`.
pub fn cyclic_labels(len: usize, n_classes: usize) -> Vec<usize> {
    (0..len).map(|i| i % n_classes).collect()
}
