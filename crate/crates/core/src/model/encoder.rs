//! Residual convolutional trunk with three parallel heads.

use ndarray::{s, Array2, Array3, Axis};
use rand::Rng;

use crate::nn::{
    cast, global_avg_pool, global_avg_pool_backward, join, relu, relu_backward, BatchNorm,
    BnCache, Conv2d, FeatureMap, Linear, MaxPool, Mode, Module, Real, Visitor,
};

/// Per-image outputs stacked along rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput<T> {
    /// `n × 6`
    pub rot6d: Array2<T>,
    /// `n × 2`, pixels
    pub t: Array2<T>,
    /// `n × d`
    pub mu: Array2<T>,
    /// `n × d`
    pub logvar: Array2<T>,
}

impl<T: Real> EncoderOutput<T> {
    pub fn len(&self) -> usize {
        self.rot6d.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        [&self.rot6d, &self.t, &self.mu, &self.logvar]
            .iter()
            .all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn rot6d_row(&self, i: usize) -> [f64; 6] {
        std::array::from_fn(|j| self.rot6d[[i, j]].to_f64().unwrap_or(f64::NAN))
    }

    pub fn t_row(&self, i: usize) -> [f64; 2] {
        [
            self.t[[i, 0]].to_f64().unwrap_or(f64::NAN),
            self.t[[i, 1]].to_f64().unwrap_or(f64::NAN),
        ]
    }
}

/// Upstream gradients for [`Encoder::backward`]. `None` latent gradients skip the conformation head.
#[derive(Debug, Clone)]
pub struct EncoderGrads<T> {
    pub rot6d: Array2<T>,
    pub t: Array2<T>,
    pub latent: Option<(Array2<T>, Array2<T>)>,
}

#[derive(Debug, Clone)]
struct BasicBlock<T> {
    c1: Conv2d<T>,
    b1: BatchNorm<T>,
    c2: Conv2d<T>,
    b2: BatchNorm<T>,
    down: Option<(Conv2d<T>, BatchNorm<T>)>,
}

struct BlockCache<T> {
    x: FeatureMap<T>,
    bn1: BnCache<T>,
    a1: FeatureMap<T>,
    bn2: BnCache<T>,
    down: Option<BnCache<T>>,
    out: Array2<T>,
}

impl<T: Real> BasicBlock<T> {
    fn new<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let down = (stride != 1 || cin != cout)
            .then(|| (Conv2d::new(cin, cout, 1, stride, 0, rng), BatchNorm::new(cout)));
        BasicBlock {
            c1: Conv2d::new(cin, cout, 3, stride, 1, rng),
            b1: BatchNorm::new(cout),
            c2: Conv2d::new(cout, cout, 3, 1, 1, rng),
            b2: BatchNorm::new(cout),
            down,
        }
    }

    fn forward(&mut self, x: FeatureMap<T>, mode: Mode) -> (FeatureMap<T>, BlockCache<T>) {
        let h1 = self.c1.forward(&x);
        let (mut a1, bn1) = self.b1.forward(&h1.data, mode);
        relu(&mut a1);
        let a1 = FeatureMap::new(a1, h1.n, h1.h, h1.w);
        let h2 = self.c2.forward(&a1);
        let (mut out, bn2) = self.b2.forward(&h2.data, mode);
        let down = match &mut self.down {
            Some((conv, bn)) => {
                let (sc, cache) = bn.forward(&conv.forward(&x).data, mode);
                out += &sc;
                Some(cache)
            }
            None => {
                out += &x.data;
                None
            }
        };
        relu(&mut out);
        let fm = FeatureMap::new(out.clone(), h2.n, h2.h, h2.w);
        (
            fm,
            BlockCache {
                x,
                bn1,
                a1,
                bn2,
                down,
                out,
            },
        )
    }

    fn backward(&mut self, c: BlockCache<T>, mut g: Array2<T>, need_input_grad: bool) -> Option<Array2<T>> {
        relu_backward(&c.out, &mut g);
        let g_h2 = self.b2.backward(&c.bn2, &g);
        let mut g_a1 = self.c2.backward(&c.a1, &g_h2, true).expect("input grad");
        relu_backward(&c.a1.data, &mut g_a1);
        let g_h1 = self.b1.backward(&c.bn1, &g_a1);
        let g_x = self.c1.backward(&c.x, &g_h1, need_input_grad);
        let g_sc = match (&mut self.down, &c.down) {
            (Some((conv, bn)), Some(cache)) => {
                let g_d = bn.backward(cache, &g);
                conv.backward(&c.x, &g_d, need_input_grad)
            }
            _ => need_input_grad.then_some(g),
        };
        match (g_x, g_sc) {
            (Some(mut a), Some(b)) => {
                a += &b;
                Some(a)
            }
            _ => None,
        }
    }
}

impl<T: Real> Module<T> for BasicBlock<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.c1.visit(&join(prefix, "conv1"), v);
        self.b1.visit(&join(prefix, "bn1"), v);
        self.c2.visit(&join(prefix, "conv2"), v);
        self.b2.visit(&join(prefix, "bn2"), v);
        if let Some((c, b)) = &mut self.down {
            c.visit(&join(prefix, "downsample.0"), v);
            b.visit(&join(prefix, "downsample.1"), v);
        }
    }
}

/// Two-layer perceptron head with a ReLU hidden layer.
#[derive(Debug, Clone)]
pub struct Head<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

impl<T: Real> Head<T> {
    fn new<R: Rng + ?Sized>(n_in: usize, hidden: usize, n_out: usize, rng: &mut R) -> Self {
        Head {
            l1: Linear::new(n_in, hidden, rng),
            l2: Linear::new(hidden, n_out, rng),
        }
    }

    fn forward(&self, x: &Array2<T>) -> (Array2<T>, Array2<T>) {
        let mut h = self.l1.forward(x);
        relu(&mut h);
        (self.l2.forward(&h), h)
    }

    fn backward(&mut self, x: &Array2<T>, h: &Array2<T>, gy: &Array2<T>) -> Array2<T> {
        let mut gh = self.l2.backward(h, gy, true).expect("input grad");
        relu_backward(h, &mut gh);
        self.l1.backward(x, &gh, true).expect("input grad")
    }
}

impl<T: Real> Module<T> for Head<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.l1.visit(&join(prefix, "0"), v);
        self.l2.visit(&join(prefix, "2"), v);
    }
}

/// Saved activations of one forward pass.
pub struct EncoderCache<T> {
    std_inputs: Array2<T>,
    inv_sd: Vec<T>,
    stem_in: FeatureMap<T>,
    stem_bn: BnCache<T>,
    stem_act: FeatureMap<T>,
    pool_arg: Vec<usize>,
    blocks: Vec<BlockCache<T>>,
    last_hw: (usize, usize),
    feat: Array2<T>,
    rot_h: Array2<T>,
    trans_h: Array2<T>,
    conf_h: Array2<T>,
}

/// Residual-18 topology (7×7 stride-2 stem, max pool, four stages of two
/// basic blocks, global average pool) followed by rotation, translation and
/// conformation heads.
#[derive(Debug, Clone)]
pub struct Encoder<T> {
    stem: Conv2d<T>,
    stem_bn: BatchNorm<T>,
    pool: MaxPool,
    blocks: Vec<BasicBlock<T>>,
    pub rot_head: Head<T>,
    pub trans_head: Head<T>,
    pub conf_head: Head<T>,
    d: usize,
    t_max: f64,
}

pub const CONF_HEAD: &str = "conf_head";

impl<T: Real> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(width: usize, hidden: usize, d: usize, t_max: f64, rng: &mut R) -> Self {
        let widths = [width, 2 * width, 4 * width, 8 * width];
        let mut blocks = Vec::new();
        let mut cin = width;
        for (stage, &w) in widths.iter().enumerate() {
            let stride = if stage == 0 { 1 } else { 2 };
            blocks.push(BasicBlock::new(cin, w, stride, rng));
            blocks.push(BasicBlock::new(w, w, 1, rng));
            cin = w;
        }
        Encoder {
            stem: Conv2d::new(1, width, 7, 2, 3, rng),
            stem_bn: BatchNorm::new(width),
            pool: MaxPool {
                k: 3,
                stride: 2,
                pad: 1,
            },
            blocks,
            rot_head: Head::new(cin, hidden, 6, rng),
            trans_head: Head::new(cin, hidden, 2, rng),
            conf_head: Head::new(cin, hidden, 2 * d, rng),
            d,
            t_max,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.d
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Runs the network on `n × L × L` images, each standardized to zero mean and unit variance first.
    pub fn forward(&mut self, images: &Array3<T>, mode: Mode) -> (EncoderOutput<T>, EncoderCache<T>) {
        let (n, h, w) = images.dim();
        let hw = h * w;
        let mut std_inputs = Array2::<T>::zeros((n * hw, 1));
        let mut inv_sd = Vec::with_capacity(n);
        let eps: T = cast(1e-8);
        for (i, img) in images.outer_iter().enumerate() {
            let mean = img.mean().unwrap_or(T::zero());
            let var = img.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cast(hw as f64);
            let inv = T::one() / (var.sqrt() + eps);
            inv_sd.push(inv);
            for (dst, &v) in std_inputs
                .slice_mut(s![i * hw..(i + 1) * hw, 0])
                .iter_mut()
                .zip(img.iter())
            {
                *dst = (v - mean) * inv;
            }
        }
        let stem_in = FeatureMap::new(std_inputs.clone(), n, h, w);
        let s = self.stem.forward(&stem_in);
        let (mut a, stem_bn) = self.stem_bn.forward(&s.data, mode);
        relu(&mut a);
        let stem_act = FeatureMap::new(a, s.n, s.h, s.w);
        let (mut x, pool_arg) = self.pool.forward(&stem_act);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &mut self.blocks {
            let (y, c) = b.forward(x, mode);
            blocks.push(c);
            x = y;
        }
        let last_hw = (x.h, x.w);
        let feat = global_avg_pool(&x);
        let (rot6d, rot_h) = self.rot_head.forward(&feat);
        let (t_raw, trans_h) = self.trans_head.forward(&feat);
        let (conf, conf_h) = self.conf_head.forward(&feat);
        let out = EncoderOutput {
            rot6d,
            t: t_raw * cast::<T>(self.t_max),
            mu: conf.slice(s![.., ..self.d]).to_owned(),
            logvar: conf.slice(s![.., self.d..]).to_owned(),
        };
        let cache = EncoderCache {
            std_inputs,
            inv_sd,
            stem_in,
            stem_bn,
            stem_act,
            pool_arg,
            blocks,
            last_hw,
            feat,
            rot_h,
            trans_h,
            conf_h,
        };
        (out, cache)
    }

    /// Accumulates parameter gradients; optionally returns `∂/∂images` (`n × L × L`).
    pub fn backward(&mut self, cache: EncoderCache<T>, g: &EncoderGrads<T>, need_input_grad: bool) -> Option<Array3<T>> {
        let mut g_feat = self.rot_head.backward(&cache.feat, &cache.rot_h, &g.rot6d);
        let g_traw = &g.t * cast::<T>(self.t_max);
        g_feat += &self.trans_head.backward(&cache.feat, &cache.trans_h, &g_traw);
        if let Some((g_mu, g_lv)) = &g.latent {
            let g_conf = ndarray::concatenate![Axis(1), *g_mu, *g_lv];
            g_feat += &self.conf_head.backward(&cache.feat, &cache.conf_h, &g_conf);
        }
        let (h, w) = cache.last_hw;
        let mut gx = global_avg_pool_backward(&g_feat, h, w);
        let mut caches = cache.blocks;
        for b in self.blocks.iter_mut().rev() {
            let c = caches.pop().expect("block cache");
            gx = b.backward(c, gx, true).expect("input grad");
        }
        let mut g_act = self.pool.backward(&cache.stem_act, &cache.pool_arg, &gx);
        relu_backward(&cache.stem_act.data, &mut g_act);
        let g_s = self.stem_bn.backward(&cache.stem_bn, &g_act);
        let g_in = self.stem.backward(&cache.stem_in, &g_s, need_input_grad)?;
        let (n, hh, ww) = (cache.stem_in.n, cache.stem_in.h, cache.stem_in.w);
        let hw = hh * ww;
        let mut out = Array3::<T>::zeros((n, hh, ww));
        let norm: T = cast(hw as f64);
        for i in 0..n {
            let gy = g_in.slice(s![i * hw..(i + 1) * hw, 0]);
            let y = cache.std_inputs.slice(s![i * hw..(i + 1) * hw, 0]);
            let mean_g = gy.sum() / norm;
            let mean_gy = gy.iter().zip(y.iter()).map(|(&a, &b)| a * b).sum::<T>() / norm;
            let inv = cache.inv_sd[i];
            for ((dst, &gv), &yv) in out
                .index_axis_mut(Axis(0), i)
                .iter_mut()
                .zip(gy.iter())
                .zip(y.iter())
            {
                *dst = (gv - mean_g - yv * mean_gy) * inv;
            }
        }
        Some(out)
    }
}

impl<T: Real> Module<T> for Encoder<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.stem.visit(&join(prefix, "stem.conv"), v);
        self.stem_bn.visit(&join(prefix, "stem.bn"), v);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit(&join(prefix, &format!("layer{}.{}", i / 2 + 1, i % 2)), v);
        }
        self.rot_head.visit(&join(prefix, "rot_head"), v);
        self.trans_head.visit(&join(prefix, "trans_head"), v);
        self.conf_head.visit(&join(prefix, CONF_HEAD), v);
    }
}
