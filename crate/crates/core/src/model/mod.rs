//! Encoder, decoder and the rendering path between them.

pub mod checkpoint;
mod decoder;
mod encoder;
mod pose;
mod render;

pub use decoder::{Decoder, DecoderCache};
pub use encoder::{Encoder, EncoderCache, EncoderGrads, EncoderOutput, Head, CONF_HEAD};
pub use pose::{rot6d_backward, rot6d_to_matrix_lenient};
pub use render::{decode_slice, extract_volume, hermitian_sign, HalfSlice, RenderCache, RenderGrads, Renderer};

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HetemError, Result};
use crate::nn::{cast, join, Mode, Module, Real, Visitor};
use crate::numerics::{CtfParams, RffBasis};

fn default_d() -> usize {
    8
}
fn default_hidden() -> usize {
    256
}
fn default_rff_m() -> usize {
    128
}
fn default_width() -> usize {
    64
}
fn default_depth() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub l: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_rff_m")]
    pub rff_m: usize,
    /// Standard deviation of the random frequencies, in cycles per unit
    /// coordinate; `None` selects `L/4`.
    #[serde(default)]
    pub rff_scale: Option<f64>,
    /// Channel count of the first residual stage (64 for the standard trunk).
    #[serde(default = "default_width")]
    pub encoder_width: usize,
    /// Hidden layers in the coordinate network.
    #[serde(default = "default_depth")]
    pub decoder_depth: usize,
    /// Translation head output is scaled to `±t_max` pixels.
    pub t_max: f64,
}

impl ModelConfig {
    pub fn new(l: usize, t_max: f64) -> Self {
        ModelConfig {
            l,
            d: default_d(),
            hidden: default_hidden(),
            rff_m: default_rff_m(),
            rff_scale: None,
            encoder_width: default_width(),
            decoder_depth: default_depth(),
            t_max,
        }
    }

    pub fn rff_scale(&self) -> f64 {
        self.rff_scale.unwrap_or(self.l as f64 / 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l % 2 != 0 || self.l < 8 {
            return Err(HetemError::Config(format!("L must be even and >= 8, got {}", self.l)));
        }
        if self.d == 0 || self.hidden == 0 || self.rff_m == 0 || self.encoder_width == 0 {
            return Err(HetemError::Config(
                "d, hidden, rff_m and encoder_width must be >= 1".into(),
            ));
        }
        if !(self.rff_scale() > 0.0) || !(self.t_max >= 0.0) {
            return Err(HetemError::Config("rff_scale must be > 0 and t_max >= 0".into()));
        }
        Ok(())
    }
}

/// Encoder and decoder trained together.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub encoder: Encoder<T>,
    pub decoder: Decoder<T>,
}

pub const ENCODER: &str = "encoder";
pub const DECODER: &str = "decoder";

impl<T: Real> Model<T> {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let basis = RffBasis::sample(cfg.rff_m, cfg.rff_scale(), &mut rng)?;
        let encoder = Encoder::new(cfg.encoder_width, cfg.hidden, cfg.d, cfg.t_max, &mut rng);
        let decoder =
            Decoder::new(basis, cfg.d, cfg.hidden, cfg.decoder_depth, &mut rng)?.with_output_gain(cfg.l as f64);
        Ok(Model {
            cfg: cfg.clone(),
            encoder,
            decoder,
        })
    }

    /// Encodes a stack in chunks (evaluation mode).
    pub fn encode_all(&mut self, images: &Array3<T>, chunk: usize) -> EncoderOutput<T> {
        let n = images.shape()[0];
        let mut parts = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + chunk.max(1)).min(n);
            let (out, _) = self
                .encoder
                .forward(&images.slice(ndarray::s![start..end, .., ..]).to_owned(), Mode::Eval);
            parts.push(out);
            start = end;
        }
        let cat = |f: &dyn Fn(&EncoderOutput<T>) -> &Array2<T>| {
            let views: Vec<_> = parts.iter().map(|p| f(p).view()).collect();
            ndarray::concatenate(ndarray::Axis(0), &views).expect("consistent widths")
        };
        EncoderOutput {
            rot6d: cat(&|p| &p.rot6d),
            t: cat(&|p| &p.t),
            mu: cat(&|p| &p.mu),
            logvar: cat(&|p| &p.logvar),
        }
    }
}

impl<T: Real> Module<T> for Model<T> {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor<T>) {
        self.encoder.visit(&join(prefix, ENCODER), v);
        self.decoder.visit(&join(prefix, DECODER), v);
    }
}

/// `z = μ + exp(logvar/2) ⊙ η`, `η ~ N(0, I)`; returns `(z, η)`.
pub fn reparameterize<T: Real, R: Rng + ?Sized>(
    mu: &Array2<T>,
    logvar: &Array2<T>,
    rng: &mut R,
) -> (Array2<T>, Array2<T>) {
    let eta = Array2::from_shape_simple_fn(mu.raw_dim(), || {
        let e: f64 = StandardNormal.sample(rng);
        cast::<T>(e)
    });
    let half: T = cast(0.5);
    let mut z = mu.clone();
    ndarray::Zip::from(&mut z)
        .and(logvar)
        .and(&eta)
        .for_each(|z, &lv, &e| *z += (lv * half).exp() * e);
    (z, eta)
}

/// Rendered real-space image for one pose, CTF and latent.
pub fn render_prediction<T: Real>(
    model: &Model<T>,
    renderer: &mut Renderer,
    rot: &nalgebra::Matrix3<f64>,
    t: [f64; 2],
    z: &[f64],
    ctf: &Array2<f64>,
) -> Array2<f64> {
    let zrow = Array2::from_shape_fn((1, z.len()), |(_, j)| cast::<T>(z[j]));
    let (h, _) = renderer.forward(&model.decoder, &[*rot], &[t], &[ctf], &zrow);
    renderer.to_image(&h[0])
}

/// CTF map helper that accepts a unit transfer function.
pub fn ctf_map(ctf: Option<&CtfParams>, l: usize, apix: f64) -> Result<Array2<f64>> {
    match ctf {
        Some(c) => crate::numerics::ctf_eval(c, l, apix),
        None => Ok(Array2::ones((l, l))),
    }
}
