//! Run configuration: one TOML file covering simulation, model, training and
//! evaluation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HetemError, Result};
use crate::model::ModelConfig;
use crate::simulator::{CtfSource, DatasetConfig, PhantomSpec};
use crate::trainer::TrainConfig;

fn d_cutoff() -> f64 {
    0.5
}
fn d_chunk() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisOptions {
    #[serde(default = "d_cutoff")]
    pub fsc_cutoff: f64,
    /// Images per encoder call during evaluation.
    #[serde(default = "d_chunk")]
    pub encode_chunk: usize,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            fsc_cutoff: d_cutoff(),
            encode_chunk: d_chunk(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: PhantomSpec,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Desk-scale two-class setup: L = 32, 4000 images at −10 dB, d = 8,
    /// frozen conformation head for the first 10 epochs.
    pub fn desk_bimodal() -> Self {
        let l = 32;
        let t_max = 2.0;
        let mut model = ModelConfig::new(l, t_max);
        model.encoder_width = 16;
        RunConfig {
            phantom: PhantomSpec::bimodal(l, 15.08),
            dataset: DatasetConfig {
                n_images: 4000,
                snr_db: -10.0,
                t_max,
                ctf: CtfSource::default(),
                seed: 0,
                fourier_pad: 2,
            },
            model,
            train: TrainConfig::new(32, 60, 10),
            analysis: AnalysisOptions::default(),
            output_dir: None,
        }
    }

    /// Ten-state arm motion with 5000 images.
    pub fn desk_arm() -> Self {
        let mut cfg = Self::desk_bimodal();
        cfg.phantom = PhantomSpec::arm_motion(32, 15.08);
        cfg.dataset.n_images = 5000;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.dataset.validate(self.phantom.n_classes)?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.l != self.phantom.l {
            return Err(HetemError::Config(format!(
                "model L = {} but phantom L = {}",
                self.model.l, self.phantom.l
            )));
        }
        if !(self.analysis.fsc_cutoff > 0.0 && self.analysis.fsc_cutoff < 1.0) || self.analysis.encode_chunk == 0 {
            return Err(HetemError::Config("fsc_cutoff must lie in (0, 1) and encode_chunk >= 1".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HetemError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| HetemError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HetemError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HetemError::Config(msg) => HetemError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::CtfParams;

    #[test]
    fn round_trips() {
        for mut cfg in [RunConfig::desk_bimodal(), RunConfig::desk_arm()] {
            cfg.train.snr_db_est = Some(-9.5);
            cfg.model.rff_scale = Some(7.25);
            cfg.output_dir = Some("runs/a".into());
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        }
        let mut cfg = RunConfig::desk_bimodal();
        cfg.dataset.snr_db = f64::INFINITY;
        cfg.dataset.ctf = CtfSource::Pool {
            entries: vec![CtfParams::typical(1.0e4), CtfParams::typical(1.7e4)],
        };
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = RunConfig::desk_bimodal().to_toml_string().unwrap();
        let bad = text.replacen("[train]\n", "[train]\nlearning_rate = 0.1\n", 1);
        assert!(matches!(RunConfig::from_toml_str(&bad), Err(HetemError::Config(_))));
        let bad = format!("colour = 3\n{text}");
        assert!(RunConfig::from_toml_str(&bad).is_err());
    }

    #[test]
    fn loss_domain_is_recorded() {
        let text = RunConfig::desk_bimodal().to_toml_string().unwrap();
        assert!(text.contains("loss_domain = \"hartley\""), "{text}");
        let bad = text.replace("loss_domain = \"hartley\"", "loss_domain = \"pixel\"");
        assert!(RunConfig::from_toml_str(&bad).is_err());
        let omitted = text.replace("loss_domain = \"hartley\"\n", "");
        assert_eq!(RunConfig::from_toml_str(&omitted).unwrap(), RunConfig::desk_bimodal());
    }

    #[test]
    fn size_mismatch_rejected() {
        let mut cfg = RunConfig::desk_bimodal();
        cfg.model.l = 64;
        assert!(cfg.validate().is_err());
    }
}
