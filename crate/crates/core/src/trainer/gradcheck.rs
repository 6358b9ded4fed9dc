//! Finite-difference check of the reconstruction gradients.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Trainer;
use crate::error::Result;
use crate::nn::{Module, Param, Visitor};

/// Worst per-tensor relative error `‖g − g_fd‖ / ‖g_fd‖` over the sampled entries.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub worst_tensor: String,
    pub worst_rel_error: f64,
    pub entries_checked: usize,
    pub tensors_checked: usize,
    /// `(name, relative error, ‖g_fd‖)` per tensor.
    pub per_tensor: Vec<(String, f64, f64)>,
}

struct Collect<'a> {
    prefix: &'a str,
    out: Vec<(String, Array2<f64>)>,
}

impl Visitor<f64> for Collect<'_> {
    fn param(&mut self, name: &str, p: &mut Param<f64>) {
        if name.starts_with(self.prefix) {
            self.out.push((name.to_string(), p.grad.clone()));
        }
    }
}

struct Nudge<'a> {
    name: &'a str,
    index: usize,
    delta: f64,
}

impl Visitor<f64> for Nudge<'_> {
    fn param(&mut self, name: &str, p: &mut Param<f64>) {
        if name == self.name {
            let flat = p.value.as_slice_mut().expect("standard layout");
            flat[self.index] += self.delta;
        }
    }
}

fn objective(t: &mut Trainer<f64>, idx: &[usize], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (parts, _) = t.recon_gradients(idx, &mut rng, false)?;
    t.model.zero_grad();
    Ok(t.recon_objective(&parts))
}

/// Compares analytic gradients of the reconstruction objective on images
/// `idx` with central differences, for up to `per_tensor` evenly spaced
/// entries of every parameter whose name starts with `prefix`. The latent
/// noise is replayed from `seed` for every evaluation. ReLU and max-pool kinks
/// make steps much above `1e-7` unreliable on the early encoder layers.
pub fn check_recon_gradients(
    t: &mut Trainer<f64>,
    idx: &[usize],
    seed: u64,
    prefix: &str,
    per_tensor: usize,
    eps: f64,
) -> Result<GradCheck> {
    t.model.zero_grad();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    t.recon_gradients(idx, &mut rng, false)?;
    let mut c = Collect { prefix, out: Vec::new() };
    t.model.visit("", &mut c);
    t.model.zero_grad();

    let mut report = GradCheck {
        worst_tensor: String::new(),
        worst_rel_error: 0.0,
        entries_checked: 0,
        tensors_checked: 0,
        per_tensor: Vec::new(),
    };
    for (name, grad) in &c.out {
        let g = grad.as_slice().expect("standard layout");
        let n = per_tensor.min(g.len());
        let (mut diff2, mut ref2) = (0.0, 0.0);
        for k in 0..n {
            let index = k * g.len() / n;
            t.model.visit("", &mut Nudge { name, index, delta: eps });
            let plus = objective(t, idx, seed)?;
            t.model.visit("", &mut Nudge { name, index, delta: -2.0 * eps });
            let minus = objective(t, idx, seed)?;
            t.model.visit("", &mut Nudge { name, index, delta: eps });
            let fd = (plus - minus) / (2.0 * eps);
            diff2 += (g[index] - fd).powi(2);
            ref2 += fd * fd;
        }
        let rel = if ref2 > 0.0 { (diff2 / ref2).sqrt() } else { diff2.sqrt() };
        report.per_tensor.push((name.clone(), rel, ref2.sqrt()));
        report.entries_checked += n;
        report.tensors_checked += 1;
        if rel > report.worst_rel_error || report.worst_tensor.is_empty() {
            report.worst_rel_error = rel;
            report.worst_tensor = name.clone();
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::simulator::{build_dataset, make_phantoms, CtfSource, DatasetConfig, PhantomSpec};
    use crate::trainer::TrainConfig;

    #[test]
    fn reconstruction_gradients_match_central_differences() {
        let spec = PhantomSpec::bimodal(16, 6.0);
        let vols = make_phantoms(&spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let ds = DatasetConfig {
            n_images: 8,
            snr_db: 0.0,
            t_max: 1.0,
            ctf: CtfSource::default(),
            seed: 2,
            fourier_pad: 2,
        };
        let stack = build_dataset(&vols, &ds).unwrap();
        let mut mc = ModelConfig::new(16, 1.0);
        mc.d = 2;
        mc.hidden = 12;
        mc.rff_m = 8;
        mc.encoder_width = 2;
        let mut t = Trainer::<f64>::new(&stack, &mc, &TrainConfig::new(4, 1, 0)).unwrap();
        for prefix in ["decoder.", "encoder."] {
            let r = check_recon_gradients(&mut t, &[0, 3, 5, 6], 9, prefix, 3, 1e-7).unwrap();
            assert!(r.tensors_checked > 0);
            assert!(r.worst_rel_error < 1e-3, "{r:?}");
        }
    }
}
