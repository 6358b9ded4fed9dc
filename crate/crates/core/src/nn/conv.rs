use ndarray::linalg::general_mat_mul;
use ndarray::Array2;
use rand::Rng;

use super::{cast, join, randn, Module, Param, Real, Visitor};

/// Batch of feature maps stored as a `(n·h·w) × c` matrix, rows in `(n, y, x)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub data: Array2<T>,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl<T: Real> FeatureMap<T> {
    pub fn new(data: Array2<T>, n: usize, h: usize, w: usize) -> Self {
        assert_eq!(data.nrows(), n * h * w, "feature map rows");
        FeatureMap { data, n, h, w }
    }

    pub fn channels(&self) -> usize {
        self.data.ncols()
    }
}

fn out_size(size: usize, k: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - k) / stride + 1
}

/// Patch matrix with column index `(ky·k + kx)·c + channel`; out-of-bounds taps are zero.
pub fn im2col<T: Real>(x: &FeatureMap<T>, k: usize, stride: usize, pad: usize) -> (Array2<T>, usize, usize) {
    let c = x.channels();
    let ho = out_size(x.h, k, stride, pad);
    let wo = out_size(x.w, k, stride, pad);
    let mut cols = Array2::<T>::zeros((x.n * ho * wo, k * k * c));
    let src = x.data.as_slice().expect("standard layout");
    let dst = cols.as_slice_mut().expect("standard layout");
    let row_len = k * k * c;
    for n in 0..x.n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = (n * ho + oy) * wo + ox;
                let out = &mut dst[row * row_len..(row + 1) * row_len];
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let s = ((n * x.h + iy as usize) * x.w + ix as usize) * c;
                        let o = (ky * k + kx) * c;
                        out[o..o + c].copy_from_slice(&src[s..s + c]);
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the input grid.
pub fn col2im<T: Real>(
    cols: &Array2<T>,
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array2<T> {
    let ho = out_size(h, k, stride, pad);
    let wo = out_size(w, k, stride, pad);
    let mut x = Array2::<T>::zeros((n * h * w, c));
    let dst = x.as_slice_mut().expect("standard layout");
    let src = cols.as_slice().expect("standard layout");
    let row_len = k * k * c;
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                let row = (b * ho + oy) * wo + ox;
                let inp = &src[row * row_len..(row + 1) * row_len];
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let d = ((b * h + iy as usize) * w + ix as usize) * c;
                        let o = (ky * k + kx) * c;
                        for (dv, &sv) in dst[d..d + c].iter_mut().zip(&inp[o..o + c]) {
                            *dv += sv;
                        }
                    }
                }
            }
        }
    }
    x
}

/// Bias-free square convolution.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub w: Param<T>,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub cin: usize,
}

impl<T: Real> Conv2d<T> {
    /// He-normal initialization with fan-out scaling.
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut R) -> Self {
        let sd = (2.0 / (cout * k * k) as f64).sqrt();
        Conv2d {
            w: Param::new(randn(k * k * cin, cout, sd, rng)),
            k,
            stride,
            pad,
            cin,
        }
    }

    pub fn forward(&self, x: &FeatureMap<T>) -> FeatureMap<T> {
        assert_eq!(x.channels(), self.cin, "conv input channels");
        let (cols, ho, wo) = im2col(x, self.k, self.stride, self.pad);
        FeatureMap::new(cols.dot(&self.w.value), x.n, ho, wo)
    }

    /// Recomputes the patch matrix from the stored input rather than caching it.
    pub fn backward(&mut self, x: &FeatureMap<T>, gy: &Array2<T>, need_input_grad: bool) -> Option<Array2<T>> {
        let (cols, _, _) = im2col(x, self.k, self.stride, self.pad);
        general_mat_mul(T::one(), &cols.t(), gy, T::one(), &mut self.w.grad);
        drop(cols);
        need_input_grad.then(|| {
            let gcols = gy.dot(&self.w.value.t());
            col2im(&gcols, x.n, x.h, x.w, self.cin, self.k, self.stride, self.pad)
        })
    }
}

impl<T: Real> Module<T> for Conv2d<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        v.param(&join(prefix, "weight"), &mut self.w);
    }
}

/// Max pooling; padded taps never win.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool {
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl MaxPool {
    /// Returns the pooled map and, per output element, the flat index of the winning input.
    pub fn forward<T: Real>(&self, x: &FeatureMap<T>) -> (FeatureMap<T>, Vec<usize>) {
        let c = x.channels();
        let ho = out_size(x.h, self.k, self.stride, self.pad);
        let wo = out_size(x.w, self.k, self.stride, self.pad);
        let src = x.data.as_slice().expect("standard layout");
        let mut out = Array2::<T>::zeros((x.n * ho * wo, c));
        let mut arg = vec![0usize; x.n * ho * wo * c];
        let dst = out.as_slice_mut().expect("standard layout");
        for n in 0..x.n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = (n * ho + oy) * wo + ox;
                    for ch in 0..c {
                        let mut best = T::neg_infinity();
                        let mut best_i = usize::MAX;
                        for ky in 0..self.k {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            for kx in 0..self.k {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                let i = ((n * x.h + iy as usize) * x.w + ix as usize) * c + ch;
                                if src[i] > best {
                                    best = src[i];
                                    best_i = i;
                                }
                            }
                        }
                        dst[row * c + ch] = best;
                        arg[row * c + ch] = best_i;
                    }
                }
            }
        }
        (FeatureMap::new(out, x.n, ho, wo), arg)
    }

    pub fn backward<T: Real>(&self, x: &FeatureMap<T>, arg: &[usize], gy: &Array2<T>) -> Array2<T> {
        let mut gx = Array2::<T>::zeros(x.data.raw_dim());
        let dst = gx.as_slice_mut().expect("standard layout");
        for (&i, &g) in arg.iter().zip(gy.iter()) {
            dst[i] += g;
        }
        gx
    }
}

/// Mean over spatial positions: `n × c`.
pub fn global_avg_pool<T: Real>(x: &FeatureMap<T>) -> Array2<T> {
    let hw = x.h * x.w;
    let c = x.channels();
    let inv: T = cast(1.0 / hw as f64);
    let mut out = Array2::<T>::zeros((x.n, c));
    for n in 0..x.n {
        let block = x.data.slice(ndarray::s![n * hw..(n + 1) * hw, ..]);
        let mut row = out.row_mut(n);
        for r in block.outer_iter() {
            row += &r;
        }
        row.mapv_inplace(|v| v * inv);
    }
    out
}

pub fn global_avg_pool_backward<T: Real>(gy: &Array2<T>, h: usize, w: usize) -> Array2<T> {
    let hw = h * w;
    let inv: T = cast(1.0 / hw as f64);
    let (n, c) = gy.dim();
    Array2::from_shape_fn((n * hw, c), |(r, ch)| gy[[r / hw, ch]] * inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::randn;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        (a * b).sum()
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (7, 2, 3), (2, 2, 0)] {
            let x = FeatureMap::new(randn::<f64, _>(2 * 9 * 7, 3, 1.0, &mut rng), 2, 9, 7);
            let (cols, _, _) = im2col(&x, k, stride, pad);
            let c = randn::<f64, _>(cols.nrows(), cols.ncols(), 1.0, &mut rng);
            let back = col2im(&c, 2, 9, 7, 3, k, stride, pad);
            let (lhs, rhs) = (dot(&cols, &c), dot(&x.data, &back));
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0), "k{k} s{stride} p{pad}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new(2, 3, 3, 2, 1, &mut rng);
        let x = FeatureMap::new(randn(6 * 6, 2, 1.0, &mut rng), 1, 6, 6);
        let y = conv.forward(&x);
        let r = randn::<f64, _>(y.data.nrows(), y.data.ncols(), 1.0, &mut rng);
        let gx = conv.backward(&x, &r, true).unwrap();
        let eps = 1e-6;
        for i in (0..x.data.len()).step_by(5) {
            let mut xp = x.clone();
            xp.data.as_slice_mut().unwrap()[i] += eps;
            let mut xm = x.clone();
            xm.data.as_slice_mut().unwrap()[i] -= eps;
            let fd = (dot(&conv.forward(&xp).data, &r) - dot(&conv.forward(&xm).data, &r)) / (2.0 * eps);
            assert!((fd - gx.as_slice().unwrap()[i]).abs() < 1e-7, "input {i}");
        }
        let gw = conv.w.grad.clone();
        for i in (0..gw.len()).step_by(4) {
            let mut c = conv.clone();
            c.w.value.as_slice_mut().unwrap()[i] += eps;
            let plus = dot(&c.forward(&x).data, &r);
            c.w.value.as_slice_mut().unwrap()[i] -= 2.0 * eps;
            let fd = (plus - dot(&c.forward(&x).data, &r)) / (2.0 * eps);
            assert!((fd - gw.as_slice().unwrap()[i]).abs() < 1e-7, "weight {i}");
        }
    }

    #[test]
    fn max_pool_routes_gradient_to_the_winner() {
        let x = FeatureMap::new(Array2::from_shape_fn((16, 1), |(i, _)| ((i * 7) % 16) as f64), 1, 4, 4);
        let pool = MaxPool { k: 3, stride: 2, pad: 1 };
        let (y, arg) = pool.forward(&x);
        assert_eq!((y.h, y.w), (2, 2));
        for (o, &i) in arg.iter().enumerate() {
            assert_eq!(y.data.as_slice().unwrap()[o], x.data.as_slice().unwrap()[i]);
        }
        let gy = Array2::from_elem((4, 1), 1.0);
        let gx = pool.backward(&x, &arg, &gy);
        assert_eq!(gx.sum(), 4.0);
        assert!(arg.iter().all(|&i| gx.as_slice().unwrap()[i] >= 1.0));
    }

    #[test]
    fn global_avg_pool_backward_is_its_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = FeatureMap::new(randn::<f64, _>(2 * 3 * 5, 4, 1.0, &mut rng), 2, 3, 5);
        let g = randn::<f64, _>(2, 4, 1.0, &mut rng);
        let lhs = dot(&global_avg_pool(&x), &g);
        let rhs = dot(&x.data, &global_avg_pool_backward(&g, 3, 5));
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
