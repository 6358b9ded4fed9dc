//! Alternating optimization: one variational reconstruction step, then one
//! conditional-pose-prediction step, per mini-batch.

mod cpp;
pub mod gradcheck;
pub mod loss;

pub use cpp::{cpp_batch, CppBatch, NoiseModel};
pub use loss::{
    cpp_terms, flip_horizontal, loss_cpp, loss_image, loss_kl, loss_recon_total, loss_sym,
    translation_penalty, LossWeights, ReconParts, LAMBDA_P, LAMBDA_T, LAMBDA_Z,
};

use std::time::Instant;

use nalgebra::Matrix3;
use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HetemError, Result};
use crate::model::checkpoint::{load_adam, load_module, store_adam, store_module, Archive};
use crate::model::{
    reparameterize, rot6d_backward, rot6d_to_matrix_lenient, EncoderGrads, Model, ModelConfig,
    Renderer, CONF_HEAD, DECODER, ENCODER,
};
use crate::nn::{cast, clip_grad_norm, randn, Adam, AdamConfig, Mode, Module, Real};
use crate::numerics::{ctf_eval, CtfParams, RffBasis};
use crate::simulator::{estimate_corner_noise_variance, image_variance, ParticleStack};

fn yes() -> bool {
    true
}

/// Domain of the reconstruction loss. Only the Hartley domain is implemented;
/// it equals the pixel MSE up to a fixed factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossDomain {
    #[default]
    Hartley,
}

/// Strategy toggles; all enabled for the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Flags {
    /// Conditional pose prediction task.
    #[serde(default = "yes")]
    pub cpp_enabled: bool,
    /// Frozen conformation head during the first epochs.
    #[serde(default = "yes")]
    pub fch_enabled: bool,
    /// Posterior-sampled latents for synthetic images.
    #[serde(default = "yes")]
    pub pds_enabled: bool,
    /// Adaptive noise matched to the dataset SNR.
    #[serde(default = "yes")]
    pub asn_enabled: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Flags {
            cpp_enabled: true,
            fch_enabled: true,
            pds_enabled: true,
            asn_enabled: true,
        }
    }
}

impl Flags {
    /// Applies a comma-separated ablation list such as `no_cpp,no_asn`.
    pub fn apply_ablations(&mut self, list: &str) -> Result<()> {
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "no_cpp" => self.cpp_enabled = false,
                "no_fch" => self.fch_enabled = false,
                "no_pds" => self.pds_enabled = false,
                "no_asn" => self.asn_enabled = false,
                other => {
                    return Err(HetemError::Config(format!(
                        "unknown flag {other:?} (expected no_cpp, no_fch, no_pds, no_asn)"
                    )))
                }
            }
        }
        Ok(())
    }
}

fn d_lr() -> f64 {
    1.5e-4
}
fn d_fch() -> usize {
    50
}
fn d_lz() -> f64 {
    LAMBDA_Z
}
fn d_lt() -> f64 {
    LAMBDA_T
}
fn d_lp() -> f64 {
    LAMBDA_P
}
fn d_clip() -> f64 {
    10.0
}
fn d_noise_ref() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "d_fch")]
    pub fch_epochs: usize,
    #[serde(default = "d_lz")]
    pub lambda_z: f64,
    #[serde(default = "d_lt")]
    pub lambda_t: f64,
    #[serde(default = "d_lp")]
    pub lambda_p: f64,
    /// SNR used for adaptive noise; estimated from the images when absent.
    #[serde(default)]
    pub snr_db_est: Option<f64>,
    #[serde(default)]
    pub flags: Flags,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_clip")]
    pub grad_clip: f64,
    /// Synthetic images per CPP step; `batch_size` when absent.
    #[serde(default)]
    pub cpp_batch_size: Option<usize>,
    /// Images used for the fixed (non-adaptive) noise estimate.
    #[serde(default = "d_noise_ref")]
    pub noise_ref_images: usize,
    #[serde(default)]
    pub loss_domain: LossDomain,
}

impl TrainConfig {
    pub fn new(batch_size: usize, epochs: usize, fch_epochs: usize) -> Self {
        TrainConfig {
            lr: d_lr(),
            batch_size,
            epochs,
            fch_epochs,
            lambda_z: LAMBDA_Z,
            lambda_t: LAMBDA_T,
            lambda_p: LAMBDA_P,
            snr_db_est: None,
            flags: Flags::default(),
            seed: 0,
            grad_clip: d_clip(),
            cpp_batch_size: None,
            noise_ref_images: d_noise_ref(),
            loss_domain: LossDomain::Hartley,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_z > 0.0 && self.lambda_t > 0.0 && self.lambda_p > 0.0) {
            return Err(HetemError::Config("all loss weights must be > 0".into()));
        }
        if !(self.lr > 0.0) || !(self.grad_clip > 0.0) {
            return Err(HetemError::Config("lr and grad_clip must be > 0".into()));
        }
        if self.batch_size < 2 || self.cpp_batch_size.is_some_and(|b| b < 2) {
            return Err(HetemError::Config("batch sizes must be >= 2".into()));
        }
        if self.fch_epochs > self.epochs {
            return Err(HetemError::Config(format!(
                "fch_epochs ({}) exceeds epochs ({})",
                self.fch_epochs, self.epochs
            )));
        }
        Ok(())
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda_z: self.lambda_z,
            lambda_t: self.lambda_t,
            lambda_p: self.lambda_p,
        }
    }
}

/// One row of the training log; CPP columns are absent when the task is disabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_sym: f64,
    pub loss_kl: f64,
    pub loss_trans: f64,
    pub loss_cpp_rot: Option<f64>,
    pub loss_cpp_trans: Option<f64>,
    pub wall_seconds: f64,
}

/// Random stream for one epoch, so a resumed run replays the same batches.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7261_696e_6572);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Mean corner-noise variance over the first `n_ref` images.
pub fn fixed_noise_variance(images: &Array3<f64>, n_ref: usize) -> f64 {
    let n = images.shape()[0].min(n_ref.max(1));
    (0..n)
        .map(|i| estimate_corner_noise_variance(&images.index_axis(Axis(0), i).to_owned()))
        .sum::<f64>()
        / n as f64
}

/// SNR in dB from total image variance and corner noise variance.
pub fn estimate_snr_db(images: &Array3<f64>, n_ref: usize) -> Result<f64> {
    let n = images.shape()[0].min(n_ref.max(1));
    let total = (0..n)
        .map(|i| image_variance(&images.index_axis(Axis(0), i).to_owned()))
        .sum::<f64>()
        / n as f64;
    let noise = fixed_noise_variance(images, n_ref);
    if !(noise > 0.0) || !(total > noise) {
        return Err(HetemError::DegenerateSignal);
    }
    Ok(10.0 * ((total - noise) / noise).log10())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Training state: model, optimizer, prepared data and epoch counter.
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub adam: Adam<T>,
    pub cfg: TrainConfig,
    pub log: Vec<EpochLog>,
    /// Number of completed epochs.
    pub epoch: usize,
    renderer: Renderer,
    images: Array3<T>,
    targets: Vec<Array2<f64>>,
    ctfs: Vec<CtfParams>,
    apix: f64,
    scale: f64,
    snr_db: f64,
    fixed_noise_var: f64,
    buffer: Option<(Array2<T>, Array2<T>)>,
    /// Variance of the most recent batch of rendered clean images.
    pub last_clean_variance: f64,
}

impl<T: Real> Trainer<T> {
    pub fn new(stack: &ParticleStack, model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        model_cfg.validate()?;
        let model = Model::new(model_cfg, cfg.seed)?;
        Self::with_model(stack, model, cfg, Adam::new(AdamConfig::with_lr(cfg.lr)), 0, Vec::new())
    }

    fn with_model(
        stack: &ParticleStack,
        model: Model<T>,
        cfg: &TrainConfig,
        adam: Adam<T>,
        epoch: usize,
        log: Vec<EpochLog>,
    ) -> Result<Self> {
        let l = stack.side();
        if l != model.cfg.l {
            return Err(HetemError::Validation(format!(
                "dataset images are {l}×{l} but the model expects L = {}",
                model.cfg.l
            )));
        }
        if stack.len() < cfg.batch_size {
            return Err(HetemError::InsufficientData(format!(
                "{} images for batch size {}",
                stack.len(),
                cfg.batch_size
            )));
        }
        let raw = stack.images.mapv(|v| v as f64);
        let sd = raw.std(0.0);
        if !(sd > 0.0) {
            return Err(HetemError::DegenerateSignal);
        }
        let scale = 1.0 / sd;
        let scaled = raw.mapv(|v| v * scale);
        let snr_db = match cfg.snr_db_est {
            Some(s) => s,
            None => estimate_snr_db(&scaled, cfg.noise_ref_images)?,
        };
        let fixed_noise_var = fixed_noise_variance(&scaled, cfg.noise_ref_images);
        let mut renderer = Renderer::new(l)?;
        let targets = scaled
            .outer_iter()
            .map(|img| renderer.hartley(&img.to_owned()))
            .collect();
        Ok(Trainer {
            model,
            adam,
            cfg: cfg.clone(),
            log,
            epoch,
            renderer,
            images: scaled.mapv(cast),
            targets,
            ctfs: stack.ctfs(),
            apix: stack.apix,
            scale,
            snr_db,
            fixed_noise_var,
            buffer: None,
            last_clean_variance: 0.0,
        })
    }

    /// Multiplier applied to raw pixel values before training.
    pub fn intensity_scale(&self) -> f64 {
        self.scale
    }

    pub fn snr_db(&self) -> f64 {
        self.snr_db
    }

    pub fn fixed_noise_variance(&self) -> f64 {
        self.fixed_noise_var
    }

    pub fn scaled_images(&self) -> &Array3<T> {
        &self.images
    }

    pub fn posterior_buffer(&self) -> Option<&(Array2<T>, Array2<T>)> {
        self.buffer.as_ref()
    }

    fn fch_active(&self, epoch: usize) -> bool {
        self.cfg.flags.fch_enabled && epoch < self.cfg.fch_epochs
    }

    fn divergence(&self, what: &str) -> HetemError {
        HetemError::Divergence {
            epoch: self.epoch,
            what: what.to_string(),
        }
    }

    /// One reconstruction step on the images `idx`; returns batch-mean loss parts.
    pub fn recon_step(&mut self, idx: &[usize], rng: &mut ChaCha8Rng, fch_active: bool) -> Result<ReconParts> {
        let (parts, posterior) = self.recon_gradients(idx, rng, fch_active)?;
        clip_grad_norm(&mut [&mut self.model], self.cfg.grad_clip);
        let frozen = format!("{ENCODER}.{CONF_HEAD}.");
        if fch_active {
            self.adam.step(&mut self.model, "", &|n: &str| !n.starts_with(&frozen));
        } else {
            self.adam.step(&mut self.model, "", &|_: &str| true);
        }
        self.model.zero_grad();
        self.buffer = Some(posterior);
        Ok(parts)
    }

    /// Reconstruction objective `loss_sym + λ_z·KL + λ_t·‖t‖₁/2` for the parts of one batch.
    pub fn recon_objective(&self, parts: &ReconParts) -> f64 {
        loss_recon_total(parts, &self.cfg.weights())
    }

    /// Forward and backward pass of the reconstruction objective. Gradients
    /// accumulate into the model; parameters are left unchanged. Returns the
    /// loss parts and the posterior `(μ, log σ²)` of the batch.
    #[allow(clippy::type_complexity)]
    pub fn recon_gradients(
        &mut self,
        idx: &[usize],
        rng: &mut ChaCha8Rng,
        fch_active: bool,
    ) -> Result<(ReconParts, (Array2<T>, Array2<T>))> {
        let b = idx.len();
        let l = self.model.cfg.l;
        let d = self.model.cfg.d;
        let batch = self.images.select(Axis(0), idx);
        let (out, cache) = self.model.encoder.forward(&batch, Mode::Train);
        if !out.all_finite() {
            return Err(self.divergence("non-finite encoder output"));
        }
        let v6: Vec<[f64; 6]> = (0..b).map(|i| out.rot6d_row(i)).collect();
        let rots: Vec<Matrix3<f64>> = v6.iter().map(rot6d_to_matrix_lenient).collect();
        let ts: Vec<[f64; 2]> = (0..b).map(|i| out.t_row(i)).collect();
        let (z, eta) = if fch_active {
            (randn::<T, _>(b, d, 1.0, rng), None)
        } else {
            let (z, eta) = reparameterize(&out.mu, &out.logvar, rng);
            (z, Some(eta))
        };
        let ctf_maps = idx
            .iter()
            .map(|&i| ctf_eval(&self.ctfs[i], l, self.apix))
            .collect::<Result<Vec<_>>>()?;
        let ctf_refs: Vec<&Array2<f64>> = ctf_maps.iter().collect();
        let (hp, rcache) = self.renderer.forward(&self.model.decoder, &rots, &ts, &ctf_refs, &z);

        let l4 = ((l * l) as f64).powi(2);
        let inv_b = 1.0 / b as f64;
        let mut parts = ReconParts::default();
        let mut g_out = Vec::with_capacity(b);
        for (i, &k) in idx.iter().enumerate() {
            let target = &self.targets[k];
            let flipped = flip_horizontal(target);
            let e1: f64 = hp[i].iter().zip(target.iter()).map(|(a, t)| (a - t).powi(2)).sum();
            let e2: f64 = hp[i].iter().zip(flipped.iter()).map(|(a, t)| (a - t).powi(2)).sum();
            let sel = if e2 < e1 { &flipped } else { target };
            parts.sym += e1.min(e2) / l4 * inv_b;
            g_out.push((&hp[i] - sel) * (2.0 / l4 * inv_b));
        }
        if !parts.sym.is_finite() {
            return Err(self.divergence("non-finite reconstruction loss"));
        }
        let rg = self
            .renderer
            .backward(&mut self.model.decoder, rcache, &g_out, true, !fch_active);

        let w = self.cfg.weights();
        let mut g_rot6d = Array2::<T>::zeros((b, 6));
        let mut g_t = Array2::<T>::zeros((b, 2));
        for i in 0..b {
            let g6 = rot6d_backward(&v6[i], &rg.rot[i]);
            for j in 0..6 {
                g_rot6d[[i, j]] = cast(g6[j]);
            }
            parts.trans += translation_penalty(ts[i]) * inv_b;
            for c in 0..2 {
                g_t[[i, c]] = cast(rg.t[i][c] + w.lambda_t * 0.5 * sign(ts[i][c]) * inv_b);
            }
        }
        let latent = if let (Some(eta), Some(g_z)) = (eta, rg.z) {
            let mut g_mu = Array2::<T>::zeros((b, d));
            let mut g_lv = Array2::<T>::zeros((b, d));
            for i in 0..b {
                let mu: Vec<f64> = out.mu.row(i).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
                let lv: Vec<f64> = out.logvar.row(i).iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect();
                parts.kl += loss_kl(&mu, &lv) * inv_b;
                for j in 0..d {
                    let gz = g_z[[i, j]].to_f64().unwrap_or(f64::NAN);
                    let e = eta[[i, j]].to_f64().unwrap_or(f64::NAN);
                    let sd = (0.5 * lv[j]).exp();
                    g_mu[[i, j]] = cast(gz + w.lambda_z * mu[j] * inv_b);
                    g_lv[[i, j]] = cast(gz * e * 0.5 * sd + w.lambda_z * 0.5 * (lv[j].exp() - 1.0) * inv_b);
                }
            }
            Some((g_mu, g_lv))
        } else {
            None
        };
        if !parts.kl.is_finite() {
            return Err(self.divergence("non-finite KL term"));
        }
        self.model.encoder.backward(
            cache,
            &EncoderGrads {
                rot6d: g_rot6d,
                t: g_t,
                latent,
            },
            false,
        );
        Ok((parts, (out.mu, out.logvar)))
    }

    /// One conditional-pose-prediction step; returns the unweighted rotation and translation terms.
    pub fn cpp_step(&mut self, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let n = self.cfg.cpp_batch_size.unwrap_or(self.cfg.batch_size);
        let noise = if self.cfg.flags.asn_enabled {
            NoiseModel::Adaptive { snr_db: self.snr_db }
        } else {
            NoiseModel::Fixed {
                variance: self.fixed_noise_var,
            }
        };
        let buffer = if self.cfg.flags.pds_enabled {
            Some(self.buffer.as_ref().ok_or_else(|| {
                HetemError::Schedule("posterior buffer is empty before the first reconstruction step".into())
            })?)
        } else {
            None
        };
        let batch = cpp_batch(
            &self.model.decoder,
            &mut self.renderer,
            buffer,
            &self.ctfs,
            self.apix,
            n,
            self.model.cfg.t_max,
            noise,
            rng,
        )?;
        self.last_clean_variance = batch.clean_variance;
        let imgs: Array3<T> = batch.images.mapv(cast);
        let (out, cache) = self.model.encoder.forward(&imgs, Mode::Train);
        if !out.all_finite() {
            return Err(self.divergence("non-finite encoder output on synthetic images"));
        }
        let inv_b = 1.0 / n as f64;
        let lp = self.cfg.lambda_p;
        let (mut rot_sum, mut trans_sum) = (0.0, 0.0);
        let mut g_rot6d = Array2::<T>::zeros((n, 6));
        let mut g_t = Array2::<T>::zeros((n, 2));
        for i in 0..n {
            let v = out.rot6d_row(i);
            let rp = rot6d_to_matrix_lenient(&v);
            let tp = out.t_row(i);
            let (r, t) = cpp_terms(&batch.rots[i], &rp, batch.ts[i], tp);
            rot_sum += r * inv_b;
            trans_sum += t * inv_b;
            let g_r = (rp - batch.rots[i]) * (lp * 2.0 / 9.0 * inv_b);
            let g6 = rot6d_backward(&v, &g_r);
            for j in 0..6 {
                g_rot6d[[i, j]] = cast(g6[j]);
            }
            for c in 0..2 {
                g_t[[i, c]] = cast(lp * 0.5 * sign(tp[c] - batch.ts[i][c]) * inv_b);
            }
        }
        if !(rot_sum + trans_sum).is_finite() {
            return Err(self.divergence("non-finite CPP loss"));
        }
        self.model.encoder.backward(
            cache,
            &EncoderGrads {
                rot6d: g_rot6d,
                t: g_t,
                latent: None,
            },
            false,
        );
        clip_grad_norm(&mut [&mut self.model.encoder], self.cfg.grad_clip);
        let enc = format!("{ENCODER}.");
        let frozen = format!("{ENCODER}.{CONF_HEAD}.");
        self.adam.step(&mut self.model, "", &|name: &str| {
            name.starts_with(&enc) && !name.starts_with(&frozen)
        });
        self.model.zero_grad();
        Ok((rot_sum, trans_sum))
    }

    /// Runs the next epoch and appends its log row.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let start = Instant::now();
        let epoch = self.epoch;
        let mut rng = epoch_rng(self.cfg.seed, epoch);
        let n = self.images.shape()[0];
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let fch = self.fch_active(epoch);
        let bs = self.cfg.batch_size;
        let n_batches = n / bs;
        let mut sums = ReconParts::default();
        let (mut cpp_rot, mut cpp_trans) = (0.0, 0.0);
        for bi in 0..n_batches {
            let idx = &perm[bi * bs..(bi + 1) * bs];
            let p = self.recon_step(idx, &mut rng, fch)?;
            sums.sym += p.sym;
            sums.kl += p.kl;
            sums.trans += p.trans;
            if self.cfg.flags.cpp_enabled {
                let (r, t) = self.cpp_step(&mut rng)?;
                cpp_rot += r;
                cpp_trans += t;
            }
        }
        let nb = n_batches as f64;
        let row = EpochLog {
            epoch,
            loss_sym: sums.sym / nb,
            loss_kl: sums.kl / nb,
            loss_trans: sums.trans / nb,
            loss_cpp_rot: self.cfg.flags.cpp_enabled.then_some(cpp_rot / nb),
            loss_cpp_trans: self.cfg.flags.cpp_enabled.then_some(cpp_trans / nb),
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        self.log.push(row.clone());
        Ok(row)
    }

    /// Archive with model tensors, RFF basis, optimizer state, configs and log.
    pub fn to_archive(&mut self) -> Archive {
        let mut archive = Archive::default();
        store_module(&mut archive, &mut self.model, "");
        let basis = self.model.decoder.basis();
        let freqs: Vec<f64> = basis.freqs().iter().flat_map(|f| f.iter().copied()).collect();
        archive.insert(format!("{DECODER}.rff_freqs"), vec![basis.m(), 3], freqs);
        let adam_meta = store_adam(&mut archive, &self.adam, "adam");
        archive.meta = serde_json::json!({
            "kind": "hetem-checkpoint",
            "epoch": self.epoch,
            "rff_scale": basis.scale(),
            "model_config": self.model.cfg,
            "train_config": self.cfg,
            "adam": adam_meta,
            "log": self.log,
            "intensity_scale": self.scale,
            "snr_db_est": self.snr_db,
        });
        archive
    }

    /// Restores a trainer from an archive written by [`Trainer::to_archive`].
    pub fn from_archive(stack: &ParticleStack, archive: &Archive) -> Result<Self> {
        let model = model_from_archive::<T>(archive)?;
        let cfg: TrainConfig = serde_json::from_value(archive.meta["train_config"].clone())?;
        let adam = load_adam(archive, &archive.meta["adam"], "adam")?;
        let epoch = archive.meta["epoch"]
            .as_u64()
            .ok_or_else(|| HetemError::Validation("checkpoint lacks epoch".into()))? as usize;
        let log: Vec<EpochLog> = serde_json::from_value(archive.meta["log"].clone())?;
        Self::with_model(stack, model, &cfg, adam, epoch, log)
    }
}

/// Rebuilds the model (parameters, running statistics, RFF basis) from an archive.
pub fn model_from_archive<T: Real>(archive: &Archive) -> Result<Model<T>> {
    let mcfg: ModelConfig = serde_json::from_value(archive.meta["model_config"].clone())?;
    let mut model = Model::<T>::new(&mcfg, 0)?;
    load_module(archive, &mut model, "")?;
    let (shape, data) = archive
        .arrays
        .get(&format!("{DECODER}.rff_freqs"))
        .ok_or_else(|| HetemError::Validation("checkpoint lacks RFF basis".into()))?;
    if shape.len() != 2 || shape[1] != 3 || shape[0] != mcfg.rff_m {
        return Err(HetemError::Validation("RFF basis has the wrong shape".into()));
    }
    let freqs = data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let scale = archive.meta["rff_scale"].as_f64().unwrap_or(mcfg.rff_scale());
    model.decoder = model.decoder.clone().with_basis(RffBasis::from_freqs(freqs, scale));
    Ok(model)
}

/// Trains from scratch (or continues `trainer`) until `cfg.epochs`, calling
/// `on_epoch` after each completed epoch.
pub fn run_training<T: Real>(
    trainer: &mut Trainer<T>,
    on_epoch: &mut dyn FnMut(&mut Trainer<T>, &EpochLog) -> Result<()>,
) -> Result<()> {
    while trainer.epoch < trainer.cfg.epochs {
        let row = trainer.run_epoch()?;
        tracing::info!(
            epoch = row.epoch,
            loss_sym = row.loss_sym,
            loss_cpp_rot = row.loss_cpp_rot,
            secs = row.wall_seconds,
            "epoch finished"
        );
        on_epoch(trainer, &row)?;
    }
    Ok(())
}
