use ndarray::{Array1, Array2, Axis};

use super::{cast, join, Mode, Module, Param, Real, Visitor};

/// Per-column batch normalization over rows.
#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Array2<T>,
    pub running_var: Array2<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(c: usize) -> Self {
        BatchNorm {
            gamma: Param::new(Array2::ones((1, c))),
            beta: Param::new(Array2::zeros((1, c))),
            running_mean: Array2::zeros((1, c)),
            running_var: Array2::ones((1, c)),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&mut self, x: &Array2<T>, mode: Mode) -> (Array2<T>, BnCache<T>) {
        let n = x.nrows();
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.mean_axis(Axis(0)).expect("nonempty batch");
                let var = x.var_axis(Axis(0), T::zero());
                let m: T = cast(self.momentum);
                let unbias: T = cast(n as f64 / (n.max(2) - 1) as f64);
                ndarray::Zip::from(self.running_mean.row_mut(0))
                    .and(&mean)
                    .for_each(|r, &v| *r = (T::one() - m) * *r + m * v);
                ndarray::Zip::from(self.running_var.row_mut(0))
                    .and(&var)
                    .for_each(|r, &v| *r = (T::one() - m) * *r + m * v * unbias);
                (mean, var)
            }
            Mode::Eval => (
                self.running_mean.row(0).to_owned(),
                self.running_var.row(0).to_owned(),
            ),
        };
        let eps: T = cast(self.eps);
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let mut xhat = x - &mean.view().insert_axis(Axis(0));
        xhat *= &inv_std.view().insert_axis(Axis(0));
        let mut y = &xhat * &self.gamma.value;
        y += &self.beta.value;
        (y, BnCache { xhat, inv_std })
    }

    /// Backward pass for a training-mode forward.
    pub fn backward(&mut self, cache: &BnCache<T>, gy: &Array2<T>) -> Array2<T> {
        let n: T = cast(gy.nrows() as f64);
        let g_beta = gy.sum_axis(Axis(0));
        let g_gamma = (gy * &cache.xhat).sum_axis(Axis(0));
        self.beta.grad += &g_beta.view().insert_axis(Axis(0));
        self.gamma.grad += &g_gamma.view().insert_axis(Axis(0));
        let mean_g = g_beta.mapv(|v| v / n);
        let mean_gx = g_gamma.mapv(|v| v / n);
        let scale = &self.gamma.value.row(0) * &cache.inv_std;
        let mut gx = gy - &mean_g.view().insert_axis(Axis(0));
        gx -= &(&cache.xhat * &mean_gx.view().insert_axis(Axis(0)));
        gx *= &scale.view().insert_axis(Axis(0));
        gx
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.param(&join(prefix, "weight"), &mut self.gamma);
        v.param(&join(prefix, "bias"), &mut self.beta);
        v.buffer(&join(prefix, "running_mean"), &mut self.running_mean);
        v.buffer(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::randn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn train_mode_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bn = BatchNorm::<f64>::new(3);
        bn.gamma.value = randn(1, 3, 1.0, &mut rng);
        bn.beta.value = randn(1, 3, 1.0, &mut rng);
        let x = randn::<f64, _>(7, 3, 2.0, &mut rng);
        let r = randn::<f64, _>(7, 3, 1.0, &mut rng);
        let (_, cache) = bn.forward(&x, Mode::Train);
        let gx = bn.backward(&cache, &r);
        let f = |bn: &BatchNorm<f64>, x: &Array2<f64>| (&bn.clone().forward(x, Mode::Train).0 * &r).sum();
        let eps = 1e-6;
        for i in 0..x.len() {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.as_slice_mut().unwrap()[i] += eps;
            xm.as_slice_mut().unwrap()[i] -= eps;
            let fd = (f(&bn, &xp) - f(&bn, &xm)) / (2.0 * eps);
            assert!((fd - gx.as_slice().unwrap()[i]).abs() < 1e-7, "input {i}: {fd}");
        }
        for j in 0..3 {
            let mut b = bn.clone();
            b.gamma.value[[0, j]] += eps;
            let plus = f(&b, &x);
            b.gamma.value[[0, j]] -= 2.0 * eps;
            let fd = (plus - f(&b, &x)) / (2.0 * eps);
            assert!((fd - bn.gamma.grad[[0, j]]).abs() < 1e-7, "gamma {j}");
            let col: f64 = r.column(j).sum();
            assert!((col - bn.beta.grad[[0, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn eval_mode_uses_running_statistics() {
        let mut bn = BatchNorm::<f64>::new(1);
        let x = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let (y, _) = bn.forward(&x, Mode::Train);
        assert!(y.sum().abs() < 1e-12);
        // mean 3, unbiased variance 14/3, blended with momentum 0.1
        assert!((bn.running_mean[[0, 0]] - 0.3).abs() < 1e-12);
        assert!((bn.running_var[[0, 0]] - (0.9 + 0.1 * 14.0 / 3.0)).abs() < 1e-12);
        let (ye, _) = bn.forward(&x, Mode::Eval);
        let expect = (1.0 - 0.3) / (bn.running_var[[0, 0]] + 1e-5f64).sqrt();
        assert!((ye[[0, 0]] - expect).abs() < 1e-12);
    }
}
