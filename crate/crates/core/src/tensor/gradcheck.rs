//! Central finite differences, used as the oracle for the tape.

use super::Tensor;

/// `(f(x + εe_i) − f(x − εe_i)) / 2ε` for every coordinate of `x`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.push((up - down) / (2.0 * eps));
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

/// Relative error with an absolute floor so that near-zero gradients do not
/// blow up the ratio.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest [`relative_error`] over paired slices.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| relative_error(x, y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_grad(|t| t.data()[0].powi(2), &Tensor::vector(vec![3.0]), 1e-4);
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn sum_is_all_ones() {
        let x = Tensor::vector(vec![0.3, -2.0, 7.5]);
        let g = finite_diff_grad(Tensor::sum, &x, 1e-4);
        for v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }
}
