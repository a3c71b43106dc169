use rand::Rng;

use crate::autodiff::Tensor;

/// Glorot-uniform: entries drawn from `±√(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::matrix(rows, cols, data).expect("shape matches data")
}

pub fn zeros_row(cols: usize) -> Tensor {
    Tensor::zeros(&[1, cols])
}
