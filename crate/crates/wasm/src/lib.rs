//! Browser bindings: render phantom projections with CTF and noise, show the
//! CTF itself, and compare phantom states by Fourier shell correlation.

use hetem::analysis::{fsc_curve, fsc_resolution};
use hetem::numerics::rotation::axis_angle;
use hetem::numerics::{ctf_eval, CtfParams, FourierVolume, Pose, Volume};
use hetem::simulator::{make_phantoms, synthesize_image, PhantomSpec};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

fn js_err(e: hetem::HetemError) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    volumes: Vec<Volume>,
    fourier: Vec<FourierVolume>,
    apix: f64,
}

#[wasm_bindgen]
impl Demo {
    /// `kind` is `"bimodal"` or `"arm"`.
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, l: usize) -> Result<Demo, JsError> {
        let apix = 15.08 * 32.0 / l as f64;
        let spec = match kind {
            "bimodal" => PhantomSpec::bimodal(l, apix),
            "arm" => PhantomSpec::arm_motion(l, apix),
            other => return Err(JsError::new(&format!("unknown phantom {other:?}"))),
        };
        let volumes = make_phantoms(&spec, &mut ChaCha8Rng::seed_from_u64(0)).map_err(js_err)?;
        let fourier = volumes
            .iter()
            .map(|v| v.to_fourier(2))
            .collect::<Result<_, _>>()
            .map_err(js_err)?;
        Ok(Demo { volumes, fourier, apix })
    }

    pub fn side(&self) -> usize {
        self.volumes[0].side()
    }

    pub fn n_states(&self) -> usize {
        self.volumes.len()
    }

    /// Row-major `L×L` image. Angles in degrees: rotation about z, then y, then z.
    /// An infinite `snr_db` gives the clean image.
    #[allow(clippy::too_many_arguments)]
    pub fn project(
        &self,
        state: usize,
        phi: f64,
        theta: f64,
        psi: f64,
        defocus: f64,
        snr_db: f64,
        seed: u64,
    ) -> Result<Vec<f32>, JsError> {
        let fv = self
            .fourier
            .get(state)
            .ok_or_else(|| JsError::new("state index out of range"))?;
        let rot = axis_angle([0.0, 0.0, 1.0], psi.to_radians())
            * axis_angle([0.0, 1.0, 0.0], theta.to_radians())
            * axis_angle([0.0, 0.0, 1.0], phi.to_radians());
        let ctf = CtfParams::typical(defocus);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (noisy, _) =
            synthesize_image(fv, &Pose::new(rot, [0.0, 0.0]), &ctf, &mut rng, snr_db).map_err(js_err)?;
        Ok(noisy.iter().map(|&v| v as f32).collect())
    }

    /// CTF values on the centered `L×L` frequency grid.
    pub fn ctf(&self, defocus: f64) -> Result<Vec<f32>, JsError> {
        let c = ctf_eval(&CtfParams::typical(defocus), self.side(), self.apix).map_err(js_err)?;
        Ok(c.iter().map(|&v| v as f32).collect())
    }

    /// Correlation per unit shell between two states, shells `0..=L/2`.
    pub fn fsc(&self, a: usize, b: usize) -> Result<Vec<f64>, JsError> {
        let (va, vb) = match (self.volumes.get(a), self.volumes.get(b)) {
            (Some(x), Some(y)) => (x, y),
            _ => return Err(JsError::new("state index out of range")),
        };
        let curve = fsc_curve(va, vb).map_err(js_err)?;
        Ok(curve.shells.iter().map(|s| s.1).collect())
    }

    /// Resolution in pixels at the given cutoff between two states.
    pub fn fsc_resolution(&self, a: usize, b: usize, cutoff: f64) -> Result<f64, JsError> {
        let va = self.volumes.get(a).ok_or_else(|| JsError::new("state index out of range"))?;
        let vb = self.volumes.get(b).ok_or_else(|| JsError::new("state index out of range"))?;
        Ok(fsc_resolution(&fsc_curve(va, vb).map_err(js_err)?, cutoff))
    }
}
