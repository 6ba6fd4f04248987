use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, SeededRng, Tensor};

/// Glorot/Xavier uniform initialization: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
///
/// For a matrix `[rows, cols]` the fan-out is `rows` and the fan-in `cols`;
/// trailing dimensions beyond the second multiply both (receptive field).
/// A vector `[n]` uses `n` for both.
pub fn xavier_uniform<T: Scalar>(shape: &[usize], rng: &mut SeededRng) -> Result<Tensor<T>> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidArgument(format!("xavier init needs positive dims, got {shape:?}")));
    }
    let (fan_in, fan_out) = match shape.len() {
        1 => (shape[0], shape[0]),
        _ => {
            let receptive: usize = shape[2..].iter().product();
            (shape[1] * receptive, shape[0] * receptive)
        }
    };
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-bound..=bound))).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Uniform `U(-scale, scale)` entries; used for character embeddings.
pub fn uniform<T: Scalar>(shape: &[usize], scale: f64, rng: &mut SeededRng) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| T::lit(rng.gen_range(-scale..=scale))).collect();
    Tensor::new(shape.to_vec(), data)
}
