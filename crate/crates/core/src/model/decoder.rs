//! Coordinate network over Fourier space with random-Fourier-feature inputs.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};
use rand::Rng;

use crate::error::Result;
use crate::nn::{cast, join, relu, relu_backward, Linear, Module, Real, Visitor};
use crate::numerics::RffBasis;

/// Maps `(q, z)` to a pair `(a, b)` with `V̂(q) = a + i·b` on the half-space
/// `q_z ≤ 0`; the other half follows from Hermitian symmetry, so every
/// rendered slice is the transform of a real image.
#[derive(Debug, Clone)]
pub struct Decoder<T> {
    basis: RffBasis,
    /// `3 × m`, already multiplied by 2π.
    freqs: Array2<T>,
    pub layers: Vec<Linear<T>>,
    d: usize,
    /// Fixed factor on the network output. Unnormalized transforms of
    /// unit-variance images have coefficients of order `L`.
    gain: f64,
}

/// Saved activations for [`Decoder::backward`].
pub struct DecoderCache<T> {
    theta: Array2<T>,
    enc: Array2<T>,
    z: Array2<T>,
    group: usize,
    acts: Vec<Array2<T>>,
}

impl<T: Real> Decoder<T> {
    /// `depth` hidden layers of width `hidden`.
    pub fn new<R: Rng + ?Sized>(
        basis: RffBasis,
        d: usize,
        hidden: usize,
        depth: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let m = basis.m();
        let mut layers = vec![Linear::new(2 * m + d, hidden, rng)];
        for _ in 1..depth.max(1) {
            layers.push(Linear::new(hidden, hidden, rng));
        }
        layers.push(Linear::new(hidden, 2, rng));
        Ok(Self::from_parts(basis, layers, d))
    }

    pub fn from_parts(basis: RffBasis, layers: Vec<Linear<T>>, d: usize) -> Self {
        let m = basis.m();
        let tau = 2.0 * std::f64::consts::PI;
        let freqs = Array2::from_shape_fn((3, m), |(c, j)| cast(tau * basis.freqs()[j][c]));
        Decoder {
            basis,
            freqs,
            layers,
            d,
            gain: 1.0,
        }
    }

    pub fn with_output_gain(mut self, gain: f64) -> Self {
        self.gain = gain;
        self
    }

    pub fn output_gain(&self) -> f64 {
        self.gain
    }

    /// Replaces the frozen frequency basis (must keep the same size).
    pub fn with_basis(self, basis: RffBasis) -> Self {
        assert_eq!(basis.m(), self.basis.m(), "RFF basis size");
        let gain = self.gain;
        Self::from_parts(basis, self.layers, self.d).with_output_gain(gain)
    }

    pub fn basis(&self) -> &RffBasis {
        &self.basis
    }

    pub fn latent_dim(&self) -> usize {
        self.d
    }

    /// Evaluates the network at `q` (`P × 3`, cycles/pixel, expected in the
    /// canonical half-space). Rows are grouped per latent: rows
    /// `[i·group, (i+1)·group)` use `z.row(i)`. Returns `P × 2`.
    pub fn forward(&self, q: &Array2<T>, z: &Array2<T>, group: usize) -> (Array2<T>, DecoderCache<T>) {
        assert_eq!(q.nrows(), z.nrows() * group, "points per latent");
        assert_eq!(z.ncols(), self.d, "latent dimension");
        let m = self.basis.m();
        let theta = q.dot(&self.freqs);
        let mut enc = Array2::<T>::zeros((q.nrows(), 2 * m));
        ndarray::Zip::from(enc.slice_mut(s![.., ..m]))
            .and(&theta)
            .for_each(|e, &t| *e = t.cos());
        ndarray::Zip::from(enc.slice_mut(s![.., m..]))
            .and(&theta)
            .for_each(|e, &t| *e = t.sin());

        let first = &self.layers[0];
        let w_rff = first.w.value.slice(s![..2 * m, ..]);
        let w_z = first.w.value.slice(s![2 * m.., ..]);
        let mut zb = z.dot(&w_z);
        zb += &first.b.value;
        let mut h = enc.dot(&w_rff);
        for (i, zrow) in zb.outer_iter().enumerate() {
            let mut blk = h.slice_mut(s![i * group..(i + 1) * group, ..]);
            blk += &zrow;
        }
        relu(&mut h);
        let mut acts = vec![h];
        let n_layers = self.layers.len();
        for (li, layer) in self.layers.iter().enumerate().skip(1) {
            let mut y = layer.forward(acts.last().expect("activation"));
            if li + 1 < n_layers {
                relu(&mut y);
            }
            acts.push(y);
        }
        let mut out = acts.pop().expect("output");
        if self.gain != 1.0 {
            let g: T = cast(self.gain);
            out.mapv_inplace(|v| v * g);
        }
        (
            out,
            DecoderCache {
                theta,
                enc,
                z: z.clone(),
                group,
                acts,
            },
        )
    }

    /// Accumulates parameter gradients. Returns `(∂/∂q, ∂/∂z)`, each when requested.
    pub fn backward(
        &mut self,
        cache: DecoderCache<T>,
        g_out: &Array2<T>,
        need_coord_grad: bool,
        need_z_grad: bool,
    ) -> (Option<Array2<T>>, Option<Array2<T>>) {
        let m = self.basis.m();
        let gain: T = cast(self.gain);
        let mut g = g_out.mapv(|v| v * gain);
        let n_layers = self.layers.len();
        for li in (1..n_layers).rev() {
            let x = &cache.acts[li - 1];
            let mut gx = self.layers[li].backward(x, &g, true).expect("input grad");
            relu_backward(x, &mut gx);
            g = gx;
        }
        let group = cache.group;
        let n = cache.z.nrows();
        let mut g_blocks = Array2::<T>::zeros((n, g.ncols()));
        for i in 0..n {
            g_blocks
                .row_mut(i)
                .assign(&g.slice(s![i * group..(i + 1) * group, ..]).sum_axis(Axis(0)));
        }
        let first = &mut self.layers[0];
        general_mat_mul(
            T::one(),
            &cache.enc.t(),
            &g,
            T::one(),
            &mut first.w.grad.slice_mut(s![..2 * m, ..]),
        );
        general_mat_mul(
            T::one(),
            &cache.z.t(),
            &g_blocks,
            T::one(),
            &mut first.w.grad.slice_mut(s![2 * m.., ..]),
        );
        first.b.grad += &g_blocks.sum_axis(Axis(0)).insert_axis(Axis(0));
        let g_z = need_z_grad.then(|| g_blocks.dot(&first.w.value.slice(s![2 * m.., ..]).t()));
        let g_q = need_coord_grad.then(|| {
            let g_enc = g.dot(&first.w.value.slice(s![..2 * m, ..]).t());
            let mut g_theta = Array2::<T>::zeros(cache.theta.raw_dim());
            ndarray::Zip::from(&mut g_theta)
                .and(&cache.theta)
                .and(g_enc.slice(s![.., ..m]))
                .and(g_enc.slice(s![.., m..]))
                .for_each(|gt, &t, &gc, &gs| *gt = t.cos() * gs - t.sin() * gc);
            g_theta.dot(&self.freqs.t())
        });
        (g_q, g_z)
    }
}

impl<T: Real> Module<T> for Decoder<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit(&join(prefix, &format!("net.{i}")), v);
        }
    }
}
