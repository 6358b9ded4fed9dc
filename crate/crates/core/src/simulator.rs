//! Phantom volumes and synthetic particle stacks from the Fourier-slice forward model.

use nalgebra::Vector3;
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HetemError, Result};
use crate::numerics::fft::{ifft2_centered_real, Complex64};
use crate::numerics::rotation::{axis_angle, sample_rotation_uniform, sample_translation_uniform};
use crate::numerics::{ctf_eval, slice_coords, translation_phase, trilinear_sample};
use crate::numerics::{CtfParams, FourierVolume, Pose, Volume};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    BimodalBlobs,
    ArmMotion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub l: usize,
    pub apix: f64,
    pub n_classes: usize,
    /// Degrees; arm-motion only.
    #[serde(default)]
    pub motion_angles: Vec<f64>,
}

impl PhantomSpec {
    pub fn bimodal(l: usize, apix: f64) -> Self {
        PhantomSpec {
            kind: PhantomKind::BimodalBlobs,
            l,
            apix,
            n_classes: 2,
            motion_angles: Vec::new(),
        }
    }

    /// Ten states at 9°, 18°, …, 90°.
    pub fn arm_motion(l: usize, apix: f64) -> Self {
        let motion_angles: Vec<f64> = (1..=10).map(|i| 9.0 * i as f64).collect();
        PhantomSpec {
            kind: PhantomKind::ArmMotion,
            l,
            apix,
            n_classes: motion_angles.len(),
            motion_angles,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.l % 2 != 0 || self.l < 16 {
            return Err(HetemError::Parameter(format!(
                "phantom side must be even and >= 16, got {}",
                self.l
            )));
        }
        if !(self.apix > 0.0) {
            return Err(HetemError::Parameter("pixel size must be positive".into()));
        }
        match self.kind {
            PhantomKind::BimodalBlobs => {
                if self.n_classes != 2 {
                    return Err(HetemError::Parameter(
                        "bimodal-blobs phantoms have exactly 2 classes".into(),
                    ));
                }
            }
            PhantomKind::ArmMotion => {
                if self.motion_angles.is_empty() || self.n_classes != self.motion_angles.len() {
                    return Err(HetemError::Parameter(format!(
                        "arm-motion needs n_classes = number of angles ({} vs {})",
                        self.n_classes,
                        self.motion_angles.len()
                    )));
                }
                if self
                    .motion_angles
                    .iter()
                    .any(|a| !(0.0..=180.0).contains(a))
                {
                    return Err(HetemError::Parameter(
                        "motion angles must lie in [0°, 180°]".into(),
                    ));
                }
                if self.motion_angles.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(HetemError::Parameter(
                        "motion angles must be strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

const BLOB_SIGMA: f64 = 2.0;
const BODY: [[f64; 3]; 5] = [
    [0.0, 0.0, 0.0],
    [4.0, 1.0, -2.0],
    [-3.0, 3.0, 1.0],
    [1.0, -4.0, 2.0],
    [-2.0, -2.0, -3.0],
];
const BIMODAL_SITES: [[f64; 3]; 2] = [[5.0, -3.0, 3.0], [-4.0, 0.0, 5.0]];
const ARM_HINGE: [f64; 3] = [2.0, 0.0, 1.0];
const ARM_AXIS: [f64; 3] = [0.0, 0.3, 1.0];
const ARM_LINKS: [f64; 3] = [2.5, 4.5, 6.5];

/// Sum of isotropic Gaussians at centered voxel coordinates.
fn blob_volume(l: usize, apix: f64, centers: &[[f64; 3]], sigma: f64) -> Result<Volume> {
    let h = (l / 2) as f64;
    let two_s2 = 2.0 * sigma * sigma;
    let data = Array3::from_shape_fn((l, l, l), |(z, y, x)| {
        let p = [x as f64 - h, y as f64 - h, z as f64 - h];
        centers
            .iter()
            .map(|c| {
                let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                (-d2 / two_s2).exp()
            })
            .sum()
    });
    Volume::new(data, apix)
}

/// Ground-truth volumes for the requested phantom family. Geometry is laid out
/// for `L = 32` and scaled with `L`; the random source jitters the body blobs
/// by up to half a pixel.
pub fn make_phantoms<R: Rng + ?Sized>(spec: &PhantomSpec, rng: &mut R) -> Result<Vec<Volume>> {
    spec.validate()?;
    let s = spec.l as f64 / 32.0;
    let scale = |p: [f64; 3]| [p[0] * s, p[1] * s, p[2] * s];
    let body: Vec<[f64; 3]> = BODY
        .iter()
        .map(|p| {
            let j: [f64; 3] = [
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ];
            scale([p[0] + j[0], p[1] + j[1], p[2] + j[2]])
        })
        .collect();
    let sigma = BLOB_SIGMA * s;
    match spec.kind {
        PhantomKind::BimodalBlobs => BIMODAL_SITES
            .iter()
            .map(|site| {
                let mut centers = body.clone();
                centers.push(scale(*site));
                blob_volume(spec.l, spec.apix, &centers, sigma)
            })
            .collect(),
        PhantomKind::ArmMotion => {
            let hinge = Vector3::from(scale(ARM_HINGE));
            spec.motion_angles
                .iter()
                .map(|deg| {
                    let r = axis_angle(ARM_AXIS, deg.to_radians());
                    let mut centers = body.clone();
                    for link in ARM_LINKS {
                        let p = hinge + r * Vector3::new(link * s, 0.0, 0.0);
                        centers.push([p.x, p.y, p.z]);
                    }
                    blob_volume(spec.l, spec.apix, &centers, sigma)
                })
                .collect()
        }
    }
}

fn variance(data: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = data.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n < 2 {
        return 0.0;
    }
    let mean = sum / n as f64;
    data.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn image_variance(img: &Array2<f64>) -> f64 {
    variance(img.iter().copied())
}

/// Converts a dB signal-to-noise ratio to the linear variance ratio.
pub fn snr_linear(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

/// Renders `ifft(T̂_t ⊙ C ⊙ slice(V̂, R))` and adds white Gaussian noise so that
/// `var(clean)/var(noise) = 10^(snr_db/10)`. `snr_db = +∞` disables noise.
/// Returns `(noisy, clean)`.
pub fn synthesize_image<R: Rng + ?Sized>(
    fvol: &FourierVolume,
    pose: &Pose,
    ctf: &CtfParams,
    rng: &mut R,
    snr_db: f64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let l = fvol.side();
    let slice = trilinear_sample(fvol, &slice_coords(&pose.rot, l));
    let c = ctf_eval(ctf, l, fvol.apix())?;
    let phase = translation_phase(pose.t, l);
    let spectrum: Array2<Complex64> = ndarray::Zip::from(&slice)
        .and(&c)
        .and(&phase)
        .map_collect(|s, c, p| s * *c * p);
    let clean = ifft2_centered_real(&spectrum)?;
    if snr_db == f64::INFINITY {
        return Ok((clean.clone(), clean));
    }
    if !snr_db.is_finite() {
        return Err(HetemError::Parameter(format!(
            "snr_db must be finite or +inf, got {snr_db}"
        )));
    }
    let var_clean = image_variance(&clean);
    if !(var_clean > 0.0) {
        return Err(HetemError::DegenerateSignal);
    }
    let sd = (var_clean / snr_linear(snr_db)).sqrt();
    let noisy = clean.mapv(|v| {
        let e: f64 = StandardNormal.sample(rng);
        v + sd * e
    });
    Ok((noisy, clean))
}

/// Sample variance of the pixels strictly outside the inscribed circle of radius `L/2`.
pub fn estimate_corner_noise_variance(image: &Array2<f64>) -> f64 {
    let l = image.shape()[0];
    let h = (l / 2) as f64;
    let r2 = h * h;
    variance(image.indexed_iter().filter_map(|((y, x), &v)| {
        let (dx, dy) = (x as f64 - h, y as f64 - h);
        (dx * dx + dy * dy > r2).then_some(v)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CtfSource {
    /// Non-astigmatic defocus drawn uniformly per image.
    Uniform {
        defocus_min: f64,
        defocus_max: f64,
        voltage: f64,
        cs: f64,
        amp_contrast: f64,
    },
    /// Each image draws one entry uniformly at random.
    Pool { entries: Vec<CtfParams> },
}

impl Default for CtfSource {
    fn default() -> Self {
        CtfSource::Uniform {
            defocus_min: 10_000.0,
            defocus_max: 20_000.0,
            voltage: 300.0,
            cs: 2.7,
            amp_contrast: 0.1,
        }
    }
}

impl CtfSource {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<CtfParams> {
        match self {
            CtfSource::Uniform {
                defocus_min,
                defocus_max,
                voltage,
                cs,
                amp_contrast,
            } => {
                if !(defocus_max >= defocus_min) {
                    return Err(HetemError::Parameter("defocus_max < defocus_min".into()));
                }
                let d = if defocus_max > defocus_min {
                    rng.random_range(*defocus_min..*defocus_max)
                } else {
                    *defocus_min
                };
                Ok(CtfParams {
                    defocus_u: d,
                    defocus_v: d,
                    astig_angle: 0.0,
                    voltage: *voltage,
                    cs: *cs,
                    amp_contrast: *amp_contrast,
                    phase_shift: 0.0,
                })
            }
            CtfSource::Pool { entries } => {
                if entries.is_empty() {
                    return Err(HetemError::Parameter("empty CTF pool".into()));
                }
                Ok(entries[rng.random_range(0..entries.len())])
            }
        }
    }
}

fn default_pad() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_images: usize,
    pub snr_db: f64,
    pub t_max: f64,
    #[serde(default)]
    pub ctf: CtfSource,
    pub seed: u64,
    /// Oversampling of the ground-truth Fourier volumes used for slicing.
    #[serde(default = "default_pad")]
    pub fourier_pad: usize,
}

impl DatasetConfig {
    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if n_classes == 0 || self.n_images % n_classes != 0 {
            return Err(HetemError::Parameter(format!(
                "n_images ({}) must be divisible by the number of classes ({n_classes})",
                self.n_images
            )));
        }
        if !self.snr_db.is_finite() && self.snr_db != f64::INFINITY {
            return Err(HetemError::Parameter("snr_db must be finite".into()));
        }
        if !(self.t_max >= 0.0) {
            return Err(HetemError::Parameter("t_max must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleMeta {
    pub index: usize,
    pub pose: Pose,
    pub ctf: CtfParams,
    pub class_label: Option<usize>,
}

/// Images (`n×L×L`, f32 as stored on disk) with per-image metadata.
#[derive(Debug, Clone)]
pub struct ParticleStack {
    pub apix: f64,
    pub images: Array3<f32>,
    pub meta: Vec<ParticleMeta>,
    /// Noise-free renders, kept only for freshly simulated stacks.
    pub clean: Option<Array3<f32>>,
}

impl ParticleStack {
    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn side(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn labels(&self) -> Option<Vec<usize>> {
        self.meta.iter().map(|m| m.class_label).collect()
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.meta.iter().map(|m| m.pose).collect()
    }

    pub fn ctfs(&self) -> Vec<CtfParams> {
        self.meta.iter().map(|m| m.ctf).collect()
    }

    /// Achieved SNR in dB: summed per-image clean variance over summed residual variance.
    pub fn achieved_snr_db(&self) -> Option<f64> {
        let clean = self.clean.as_ref()?;
        let (mut sig, mut noise) = (0.0, 0.0);
        for (c, n) in clean.outer_iter().zip(self.images.outer_iter()) {
            sig += variance(c.iter().map(|&v| v as f64));
            noise += variance(c.iter().zip(n.iter()).map(|(&c, &n)| (n - c) as f64));
        }
        if noise == 0.0 {
            return Some(f64::INFINITY);
        }
        Some(10.0 * (sig / noise).log10())
    }
}

/// Random stream dedicated to image `index`, independent of generation order.
pub fn image_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

struct Rendered {
    noisy: Array2<f64>,
    clean: Array2<f64>,
    meta: ParticleMeta,
}

fn render_one(fvols: &[FourierVolume], cfg: &DatasetConfig, index: usize) -> Result<Rendered> {
    let mut rng = image_rng(cfg.seed, index);
    let class = index % fvols.len();
    let rot = sample_rotation_uniform(&mut rng);
    let t = sample_translation_uniform(&mut rng, cfg.t_max);
    let pose = Pose::new(rot, t);
    let ctf = cfg.ctf.draw(&mut rng)?;
    let (noisy, clean) = synthesize_image(&fvols[class], &pose, &ctf, &mut rng, cfg.snr_db)?;
    Ok(Rendered {
        noisy,
        clean,
        meta: ParticleMeta {
            index,
            pose,
            ctf,
            class_label: Some(class),
        },
    })
}

/// Round-robin class assignment, Haar rotations, uniform translations and CTFs
/// drawn from the configured source. Each image uses its own random stream.
pub fn build_dataset(volumes: &[Volume], cfg: &DatasetConfig) -> Result<ParticleStack> {
    if volumes.is_empty() {
        return Err(HetemError::Parameter("no ground-truth volumes".into()));
    }
    let l = volumes[0].side();
    let apix = volumes[0].apix();
    if volumes.iter().any(|v| v.side() != l || v.apix() != apix) {
        return Err(HetemError::Dimension(
            "volumes differ in size or pixel size".into(),
        ));
    }
    cfg.validate(volumes.len())?;
    let fvols: Vec<FourierVolume> = volumes
        .iter()
        .map(|v| v.to_fourier(cfg.fourier_pad))
        .collect::<Result<_>>()?;

    #[cfg(feature = "parallel")]
    let rendered: Vec<Rendered> = {
        use rayon::prelude::*;
        (0..cfg.n_images)
            .into_par_iter()
            .map(|i| render_one(&fvols, cfg, i))
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let rendered: Vec<Rendered> = (0..cfg.n_images)
        .map(|i| render_one(&fvols, cfg, i))
        .collect::<Result<_>>()?;

    let n = cfg.n_images;
    let mut images = Array3::<f32>::zeros((n, l, l));
    let mut clean = Array3::<f32>::zeros((n, l, l));
    let mut meta = Vec::with_capacity(n);
    for (i, r) in rendered.into_iter().enumerate() {
        images
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&r.noisy.mapv(|v| v as f32));
        clean
            .index_axis_mut(ndarray::Axis(0), i)
            .assign(&r.clean.mapv(|v| v as f32));
        meta.push(r.meta);
    }
    Ok(ParticleStack {
        apix,
        images,
        meta,
        clean: Some(clean),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn arm_motion_gives_one_volume_per_angle() {
        let vols = make_phantoms(&PhantomSpec::arm_motion(32, 6.0), &mut rng()).unwrap();
        assert_eq!(vols.len(), 10);
        let m0 = vols[0].mass();
        for v in &vols {
            assert!(((v.mass() - m0) / m0).abs() < 0.01);
            assert_eq!(v.side(), 32);
        }
    }

    #[test]
    fn bimodal_gives_two_different_volumes_of_equal_mass() {
        let vols = make_phantoms(&PhantomSpec::bimodal(32, 6.0), &mut rng()).unwrap();
        assert_eq!(vols.len(), 2);
        assert!(vols[0].data() != vols[1].data());
        assert!(((vols[0].mass() - vols[1].mass()) / vols[0].mass()).abs() < 0.01);
    }

    #[test]
    fn single_angle_arm_matches_direct_construction() {
        let mut spec = PhantomSpec::arm_motion(32, 6.0);
        spec.motion_angles = vec![45.0];
        spec.n_classes = 1;
        let one = make_phantoms(&spec, &mut rng()).unwrap();
        let all = make_phantoms(&PhantomSpec::arm_motion(32, 6.0), &mut rng()).unwrap();
        assert_eq!(one.len(), 1);
        // 45° is the fifth default state; same jitter stream
        assert_eq!(one[0].data(), all[4].data());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = PhantomSpec::arm_motion(32, 6.0);
        spec.motion_angles[9] = 190.0;
        assert!(make_phantoms(&spec, &mut rng()).is_err());
        let mut spec = PhantomSpec::arm_motion(32, 6.0);
        spec.motion_angles.swap(0, 1);
        assert!(make_phantoms(&spec, &mut rng()).is_err());
        let mut spec = PhantomSpec::bimodal(32, 6.0);
        spec.n_classes = 3;
        assert!(make_phantoms(&spec, &mut rng()).is_err());
    }

    #[test]
    fn zero_image_has_zero_corner_variance() {
        assert_eq!(
            estimate_corner_noise_variance(&Array2::zeros((32, 32))),
            0.0
        );
    }

    #[test]
    fn corner_variance_of_pure_noise() {
        let mut r = rng();
        let sigma2: f64 = 2.5;
        let img = Array2::from_shape_fn((128, 128), |_| {
            let e: f64 = StandardNormal.sample(&mut r);
            e * sigma2.sqrt()
        });
        let est = estimate_corner_noise_variance(&img);
        assert!((est / sigma2 - 1.0).abs() < 0.1, "{est}");
    }

    #[test]
    fn noiseless_synthesis_and_degenerate_signal() {
        let vols = make_phantoms(&PhantomSpec::bimodal(16, 6.0), &mut rng()).unwrap();
        let fv = vols[0].to_fourier(2).unwrap();
        let pose = Pose::identity();
        let ctf = CtfParams::typical(15000.0);
        let (noisy, clean) =
            synthesize_image(&fv, &pose, &ctf, &mut rng(), f64::INFINITY).unwrap();
        assert_eq!(noisy, clean);
        let zero = Volume::zeros(16, 6.0).unwrap().to_fourier(1).unwrap();
        assert!(matches!(
            synthesize_image(&zero, &pose, &ctf, &mut rng(), -10.0),
            Err(HetemError::DegenerateSignal)
        ));
    }

    #[test]
    fn divisibility_is_enforced() {
        let vols = make_phantoms(&PhantomSpec::bimodal(16, 6.0), &mut rng()).unwrap();
        let cfg = DatasetConfig {
            n_images: 7,
            snr_db: -10.0,
            t_max: 1.0,
            ctf: CtfSource::default(),
            seed: 0,
            fourier_pad: 1,
        };
        assert!(build_dataset(&vols, &cfg).is_err());
    }

    #[test]
    fn images_do_not_depend_on_stack_size() {
        let vols = make_phantoms(&PhantomSpec::bimodal(16, 6.0), &mut rng()).unwrap();
        let mut cfg = DatasetConfig {
            n_images: 4,
            snr_db: -10.0,
            t_max: 1.0,
            ctf: CtfSource::default(),
            seed: 5,
            fourier_pad: 2,
        };
        let a = build_dataset(&vols, &cfg).unwrap();
        cfg.n_images = 8;
        let b = build_dataset(&vols, &cfg).unwrap();
        assert_eq!(
            a.images,
            b.images.slice(ndarray::s![0..4, .., ..]).to_owned()
        );
        assert_eq!(b.labels().unwrap(), vec![0, 1, 0, 1, 0, 1, 0, 1]);
    }
}
