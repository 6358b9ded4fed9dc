//! Weak-phase contrast transfer function.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::fft::centered_freq;
use crate::error::{HetemError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CtfParams {
    /// Å
    pub defocus_u: f64,
    /// Å
    pub defocus_v: f64,
    /// radians
    pub astig_angle: f64,
    /// kV
    pub voltage: f64,
    /// mm
    pub cs: f64,
    pub amp_contrast: f64,
    /// radians
    pub phase_shift: f64,
}

impl CtfParams {
    /// Non-astigmatic parameters at 300 kV, Cs 2.7 mm, 10% amplitude contrast.
    pub fn typical(defocus: f64) -> Self {
        CtfParams {
            defocus_u: defocus,
            defocus_v: defocus,
            astig_angle: 0.0,
            voltage: 300.0,
            cs: 2.7,
            amp_contrast: 0.1,
            phase_shift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.voltage > 0.0) {
            return Err(HetemError::Parameter(format!(
                "voltage must be positive, got {}",
                self.voltage
            )));
        }
        if !(self.defocus_u > 0.0 && self.defocus_v > 0.0) {
            return Err(HetemError::Parameter(format!(
                "defocus must be positive, got ({}, {})",
                self.defocus_u, self.defocus_v
            )));
        }
        if !(0.0..1.0).contains(&self.amp_contrast) {
            return Err(HetemError::Parameter(format!(
                "amplitude contrast must lie in [0, 1), got {}",
                self.amp_contrast
            )));
        }
        let finite = [self.astig_angle, self.cs, self.phase_shift]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(HetemError::Parameter("non-finite CTF parameter".into()));
        }
        Ok(())
    }

    /// Value at spatial frequency `(sx, sy)` in 1/Å.
    pub fn value_at(&self, sx: f64, sy: f64) -> f64 {
        let lambda = electron_wavelength(self.voltage);
        let s2 = sx * sx + sy * sy;
        let theta = sy.atan2(sx);
        let defocus = 0.5
            * (self.defocus_u
                + self.defocus_v
                + (self.defocus_u - self.defocus_v) * (2.0 * (theta - self.astig_angle)).cos());
        let cs = self.cs * 1e7;
        let gamma = PI * lambda * defocus * s2 - 0.5 * PI * cs * lambda.powi(3) * s2 * s2
            + self.phase_shift;
        let w = self.amp_contrast;
        -((1.0 - w * w).sqrt() * gamma.sin() + w * gamma.cos())
    }
}

/// Relativistic electron wavelength in Å for an accelerating voltage in kV.
pub fn electron_wavelength(voltage_kv: f64) -> f64 {
    let v = voltage_kv * 1e3;
    12.264_259_6 / (v * (1.0 + 0.978_466e-6 * v)).sqrt()
}

/// CTF sampled on the centered `L×L` frequency grid for pixel size `apix`.
pub fn ctf_eval(params: &CtfParams, l: usize, apix: f64) -> Result<Array2<f64>> {
    params.validate()?;
    if !(apix > 0.0) {
        return Err(HetemError::Parameter(format!("pixel size must be positive, got {apix}")));
    }
    Ok(Array2::from_shape_fn((l, l), |(y, x)| {
        params.value_at(centered_freq(x, l) / apix, centered_freq(y, l) / apix)
    }))
}
