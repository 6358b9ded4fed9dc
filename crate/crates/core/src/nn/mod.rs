//! Minimal reverse-mode layer library: each layer exposes an explicit forward
//! returning a cache and a backward that accumulates parameter gradients.

mod adam;
mod conv;
mod linear;
mod norm;

pub use adam::{clip_grad_norm, Adam, AdamConfig, AdamState};
pub use conv::{col2im, im2col, Conv2d, FeatureMap, MaxPool, global_avg_pool, global_avg_pool_backward};
pub use linear::Linear;
pub use norm::{BatchNorm, BnCache};

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub trait Real:
    Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn cast<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Array2<T>,
    pub grad: Array2<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Array2<T>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// Receives every named tensor of a module.
pub trait Visitor<T> {
    fn param(&mut self, name: &str, p: &mut Param<T>);
    /// Non-trainable state such as batch-norm running statistics.
    fn buffer(&mut self, _name: &str, _b: &mut Array2<T>) {}
}

pub trait Module<T: Real> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>);

    fn zero_grad(&mut self) {
        struct Z;
        impl<T: Real> Visitor<T> for Z {
            fn param(&mut self, _: &str, p: &mut Param<T>) {
                p.zero_grad();
            }
        }
        self.visit("", &mut Z);
    }

    fn num_params(&mut self) -> usize {
        struct C(usize);
        impl<T: Real> Visitor<T> for C {
            fn param(&mut self, _: &str, p: &mut Param<T>) {
                self.0 += p.value.len();
            }
        }
        let mut c = C(0);
        self.visit("", &mut c);
        c.0
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub fn randn<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, sd: f64, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let e: f64 = StandardNormal.sample(rng);
        cast(e * sd)
    })
}

pub fn uniform<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || cast(rng.random_range(-bound..=bound)))
}

pub fn relu<T: Real>(x: &mut Array2<T>) {
    x.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
}

/// Zeroes `g` where the post-activation `y` is not positive.
pub fn relu_backward<T: Real>(y: &Array2<T>, g: &mut Array2<T>) {
    ndarray::Zip::from(g).and(y).for_each(|g, &y| {
        if y <= T::zero() {
            *g = T::zero();
        }
    });
}
