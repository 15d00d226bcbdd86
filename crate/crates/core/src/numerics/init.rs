use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::{Real, Tensor};

pub type Rng64 = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_scale(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Uniform draws in `[-scale, scale)`.
pub fn init_uniform<T: Real>(rng: &mut Rng64, shape: &[usize], scale: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.gen_range(-scale..scale)))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("sized from shape")
}

/// Glorot-uniform matrix of shape `rows x cols`.
pub fn init_glorot<T: Real>(rng: &mut Rng64, rows: usize, cols: usize) -> Tensor<T> {
    init_uniform(rng, &[rows, cols], glorot_scale(rows, cols))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_tensor() {
        let a: Tensor<f32> = init_uniform(&mut seeded_rng(9), &[4, 5], 0.3);
        let b: Tensor<f32> = init_uniform(&mut seeded_rng(9), &[4, 5], 0.3);
        assert_eq!(a, b);
        let c: Tensor<f32> = init_uniform(&mut seeded_rng(10), &[4, 5], 0.3);
        assert_ne!(a, c);
    }

    #[test]
    fn values_within_scale() {
        let t: Tensor<f64> = init_glorot(&mut seeded_rng(1), 30, 50);
        let s = glorot_scale(30, 50);
        assert!(t.data().iter().all(|v| v.abs() <= s));
    }

    #[test]
    fn empirical_mean_near_zero() {
        // U(-1, 1) has variance 1/3; the mean of n draws has sd sqrt(1/(3n)).
        let n = 1_000_000;
        let t: Tensor<f64> = init_uniform(&mut seeded_rng(2024), &[n], 1.0);
        let mean = t.data().iter().sum::<f64>() / n as f64;
        let sigma = (1.0 / (3.0 * n as f64)).sqrt();
        assert!(
            mean.abs() < 3.0 * sigma,
            "mean {mean} vs 3 sigma {}",
            3.0 * sigma
        );
    }
}
