use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{cast, Module, Param, Real, Visitor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments and step count of one parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub m: Array2<T>,
    pub v: Array2<T>,
    pub step: u64,
}

/// Adam with a separate step counter per parameter, so tensors that sit out
/// some updates (frozen heads) get correct bias correction when they resume.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub cfg: AdamConfig,
    pub state: BTreeMap<String, AdamState<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            state: BTreeMap::new(),
        }
    }

    /// Updates every parameter of `module` whose full name passes `filter`.
    pub fn step(&mut self, module: &mut dyn Module<T>, prefix: &str, filter: &dyn Fn(&str) -> bool) {
        struct S<'a, T> {
            adam: &'a mut Adam<T>,
            filter: &'a dyn Fn(&str) -> bool,
        }
        impl<T: Real> Visitor<T> for S<'_, T> {
            fn param(&mut self, name: &str, p: &mut Param<T>) {
                if !(self.filter)(name) {
                    return;
                }
                let cfg = self.adam.cfg;
                let st = self
                    .adam
                    .state
                    .entry(name.to_string())
                    .or_insert_with(|| AdamState {
                        m: Array2::zeros(p.value.raw_dim()),
                        v: Array2::zeros(p.value.raw_dim()),
                        step: 0,
                    });
                st.step += 1;
                let b1: T = cast(cfg.beta1);
                let b2: T = cast(cfg.beta2);
                let bc1 = 1.0 - cfg.beta1.powi(st.step as i32);
                let bc2 = 1.0 - cfg.beta2.powi(st.step as i32);
                let step_size: T = cast(cfg.lr / bc1);
                let bc2_sqrt: T = cast(bc2.sqrt());
                let eps: T = cast(cfg.eps);
                ndarray::Zip::from(&mut p.value)
                    .and(&p.grad)
                    .and(&mut st.m)
                    .and(&mut st.v)
                    .for_each(|w, &g, m, v| {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        *w -= step_size * *m / ((*v).sqrt() / bc2_sqrt + eps);
                    });
            }
        }
        module.visit(
            prefix,
            &mut S {
                adam: self,
                filter,
            },
        );
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_grad_norm<T: Real>(modules: &mut [&mut dyn Module<T>], max_norm: f64) -> f64 {
    struct N(f64);
    impl<T: Real> Visitor<T> for N {
        fn param(&mut self, _: &str, p: &mut Param<T>) {
            self.0 += p
                .grad
                .iter()
                .map(|g| {
                    let g = g.to_f64().unwrap_or(f64::NAN);
                    g * g
                })
                .sum::<f64>();
        }
    }
    let mut n = N(0.0);
    for m in modules.iter_mut() {
        m.visit("", &mut n);
    }
    let norm = n.0.sqrt();
    if norm > max_norm && norm.is_finite() {
        struct S<T>(T);
        impl<T: Real> Visitor<T> for S<T> {
            fn param(&mut self, _: &str, p: &mut Param<T>) {
                p.grad.mapv_inplace(|g| g * self.0);
            }
        }
        let mut s = S(cast::<T>(max_norm / norm));
        for m in modules.iter_mut() {
            m.visit("", &mut s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use rand::SeedableRng;

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new(2, 2, &mut rng);
        let before = lin.w.value.clone();
        lin.w.grad.fill(3.0);
        lin.b.grad.fill(-0.5);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-2));
        adam.step(&mut lin, "", &|_| true);
        for (a, b) in lin.w.value.iter().zip(before.iter()) {
            assert!((b - a - 1e-2).abs() < 1e-8);
        }
        assert_eq!(adam.state["weight"].step, 1);
    }

    #[test]
    fn filtered_params_untouched() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::<f32>::new(3, 2, &mut rng);
        let b0 = lin.b.value.clone();
        lin.w.grad.fill(1.0);
        lin.b.grad.fill(1.0);
        let mut adam = Adam::new(AdamConfig::with_lr(1e-3));
        adam.step(&mut lin, "", &|n| n != "bias");
        assert_eq!(lin.b.value, b0);
        assert!(!adam.state.contains_key("bias"));
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut a = Linear::<f64>::new(2, 2, &mut rng);
        let mut b = Linear::<f64>::new(2, 2, &mut rng);
        a.w.grad.fill(10.0);
        b.b.grad.fill(10.0);
        let pre = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert!((pre - 600f64.sqrt()).abs() < 1e-9);
        let post = clip_grad_norm(&mut [&mut a, &mut b], 1e9);
        assert!((post - 1.0).abs() < 1e-12, "{post}");
    }
}
