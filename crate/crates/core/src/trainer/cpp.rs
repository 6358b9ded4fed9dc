//! Synthetic image batches for conditional pose prediction.

use nalgebra::Matrix3;
use ndarray::{Array2, Array3, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{HetemError, Result};
use crate::model::{reparameterize, Decoder, Renderer};
use crate::nn::{randn, Real};
use crate::numerics::rotation::{sample_rotation_uniform, sample_translation_uniform};
use crate::numerics::{ctf_eval, CtfParams};
use crate::simulator::snr_linear;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// `σ² = var(clean batch) / SNR`.
    Adaptive { snr_db: f64 },
    Fixed { variance: f64 },
}

#[derive(Debug, Clone)]
pub struct CppBatch {
    pub images: Array3<f64>,
    pub clean: Array3<f64>,
    pub rots: Vec<Matrix3<f64>>,
    pub ts: Vec<[f64; 2]>,
    pub clean_variance: f64,
    pub noise_variance: f64,
}

/// Renders `n` noisy images at Haar-random rotations and uniform translations
/// in `[−t_max, t_max)` through a frozen decoder. Latents come from the
/// posterior buffer when given, otherwise from the standard normal prior.
/// CTFs are drawn uniformly from `ctf_pool`.
#[allow(clippy::too_many_arguments)]
pub fn cpp_batch<T: Real>(
    dec: &Decoder<T>,
    renderer: &mut Renderer,
    buffer: Option<&(Array2<T>, Array2<T>)>,
    ctf_pool: &[CtfParams],
    apix: f64,
    n: usize,
    t_max: f64,
    noise: NoiseModel,
    rng: &mut ChaCha8Rng,
) -> Result<CppBatch> {
    if ctf_pool.is_empty() {
        return Err(HetemError::Parameter("empty CTF pool".into()));
    }
    let l = renderer.side();
    let d = dec.latent_dim();
    let rots: Vec<Matrix3<f64>> = (0..n).map(|_| sample_rotation_uniform(rng)).collect();
    let ts: Vec<[f64; 2]> = (0..n).map(|_| sample_translation_uniform(rng, t_max)).collect();
    let z = match buffer {
        Some((mu, logvar)) => {
            if mu.nrows() == 0 {
                return Err(HetemError::Schedule("posterior buffer is empty".into()));
            }
            let pick: Vec<usize> = if mu.nrows() == n {
                (0..n).collect()
            } else {
                (0..n).map(|_| rng.random_range(0..mu.nrows())).collect()
            };
            let (z, _) = reparameterize(&mu.select(Axis(0), &pick), &logvar.select(Axis(0), &pick), rng);
            z
        }
        None => randn::<T, _>(n, d, 1.0, rng),
    };
    let ctf_maps = (0..n)
        .map(|_| ctf_eval(&ctf_pool[rng.random_range(0..ctf_pool.len())], l, apix))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Array2<f64>> = ctf_maps.iter().collect();
    let (h, _) = renderer.forward(dec, &rots, &ts, &refs, &z);
    let mut clean = Array3::<f64>::zeros((n, l, l));
    for (i, hi) in h.iter().enumerate() {
        clean.index_axis_mut(Axis(0), i).assign(&renderer.to_image(hi));
    }
    let clean_variance = clean.var(1.0);
    let noise_variance = match noise {
        NoiseModel::Adaptive { snr_db } => clean_variance / snr_linear(snr_db),
        NoiseModel::Fixed { variance } => variance,
    };
    let sd = noise_variance.max(0.0).sqrt();
    let images = clean.mapv(|v| {
        let e: f64 = StandardNormal.sample(rng);
        v + sd * e
    });
    Ok(CppBatch {
        images,
        clean,
        rots,
        ts,
        clean_variance,
        noise_variance,
    })
}
