use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use rand::Rng;

use super::{join, uniform, Module, Param, Real, Visitor};

/// `y = x W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub w: Param<T>,
    pub b: Param<T>,
}

impl<T: Real> Linear<T> {
    /// Uniform initialization in `±1/√in` for weights and biases.
    pub fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Linear {
            w: Param::new(uniform(n_in, n_out, bound, rng)),
            b: Param::new(uniform(1, n_out, bound, rng)),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w.value.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.w.value);
        y += &self.b.value;
        y
    }

    /// Accumulates parameter gradients; returns the input gradient when requested.
    pub fn backward(&mut self, x: &Array2<T>, gy: &Array2<T>, need_input_grad: bool) -> Option<Array2<T>> {
        general_mat_mul(T::one(), &x.t(), gy, T::one(), &mut self.w.grad);
        self.b.grad += &gy.sum_axis(Axis(0)).insert_axis(Axis(0));
        need_input_grad.then(|| gy.dot(&self.w.value.t()))
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.param(&join(prefix, "weight"), &mut self.w);
        v.param(&join(prefix, "bias"), &mut self.b);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::randn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradients_are_exact_for_a_linear_objective() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut lin = Linear::<f64>::new(4, 3, &mut rng);
        let x = randn::<f64, _>(5, 4, 1.0, &mut rng);
        let r = randn::<f64, _>(5, 3, 1.0, &mut rng);
        let gx = lin.backward(&x, &r, true).unwrap();
        let f = |l: &Linear<f64>, x: &Array2<f64>| (&l.forward(x) * &r).sum();
        let eps = 1e-6;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.as_slice_mut().unwrap()[i] += eps;
            xm.as_slice_mut().unwrap()[i] -= eps;
            let fd = (f(&lin, &xp) - f(&lin, &xm)) / (2.0 * eps);
            assert!((fd - gx.as_slice().unwrap()[i]).abs() < 1e-8);
        }
        assert!((&lin.w.grad - &x.t().dot(&r)).iter().all(|v| v.abs() < 1e-12));
        assert!((&lin.b.grad.row(0) - &r.sum_axis(Axis(0))).iter().all(|v| v.abs() < 1e-12));
        // gradients accumulate across calls
        lin.backward(&x, &r, false);
        assert!((&lin.w.grad - &(x.t().dot(&r) * 2.0)).iter().all(|v| v.abs() < 1e-12));
    }
}
