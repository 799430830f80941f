use super::rng::Rng;
use super::{Real, Tensor};

/// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<F: Real>(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Tensor<F> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| F::lit(rng.uniform_range(-a, a)))
        .collect();
    Tensor::new(vec![fan_in, fan_out], data).expect("positive fan")
}

/// Xavier vector for a weight that acts as a `len×1` projection.
pub fn xavier_vector<F: Real>(rng: &mut Rng, len: usize) -> Tensor<F> {
    let t = xavier_uniform(rng, len, 1);
    Tensor::vector(t.into_data())
}

pub fn gaussian<F: Real>(rng: &mut Rng, shape: &[usize], std: f64) -> Tensor<F> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| F::lit(std * rng.gaussian())).collect();
    Tensor::new(shape.to_vec(), data).expect("positive extents")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn xavier_bounds() {
        let mut rng = Rng::new(1);
        let t: Tensor<f64> = xavier_uniform(&mut rng, 10, 6);
        let a = (6.0f64 / 16.0).sqrt();
        assert!(t.data().iter().all(|x| x.abs() <= a));
        assert_eq!(t.shape(), &[10, 6]);
    }
}
