//! Central-slice extraction and the brute-force real-space projector.

use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use std::f64::consts::PI;

use super::fft::{centered_freq, Complex64};
use super::rotation::Pose;
use super::volume::{FourierVolume, Volume};

/// The `L²` points `Rᵀ·[kx, ky, 0]` of a rotated central plane, row-major over `(ky, kx)`,
/// in cycles/pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceCoords {
    l: usize,
    coords: Vec<[f64; 3]>,
}

impl SliceCoords {
    pub fn side(&self) -> usize {
        self.l
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.coords
    }
}

pub fn slice_coords(rot: &Matrix3<f64>, l: usize) -> SliceCoords {
    let rt = rot.transpose();
    let mut coords = Vec::with_capacity(l * l);
    for y in 0..l {
        for x in 0..l {
            let k = Vector3::new(centered_freq(x, l), centered_freq(y, l), 0.0);
            let q = rt * k;
            coords.push([q.x, q.y, q.z]);
        }
    }
    SliceCoords { l, coords }
}

/// Evaluates the Fourier volume on a slice by trilinear interpolation of the
/// real and imaginary parts. Points outside the grid support give zero.
pub fn trilinear_sample(fvol: &FourierVolume, coords: &SliceCoords) -> Array2<Complex64> {
    let l = coords.side();
    let data: Vec<Complex64> = coords.points().iter().map(|&k| fvol.sample(k)).collect();
    Array2::from_shape_vec((l, l), data).expect("slice shape")
}

/// Real-space projection oracle: resample `V(Rᵀ p)` trilinearly, sum along z,
/// then shift the image by `t`.
pub fn project_real_space(vol: &Volume, pose: &Pose) -> Array2<f64> {
    let l = vol.side();
    let h = (l / 2) as f64;
    let rt = pose.rot.transpose();
    let mut img = Array2::<f64>::zeros((l, l));
    for y in 0..l {
        for x in 0..l {
            let mut acc = 0.0;
            for z in 0..l {
                let p = Vector3::new(x as f64 - h, y as f64 - h, z as f64 - h);
                let q = rt * p;
                acc += vol.sample([q.x, q.y, q.z]);
            }
            img[[y, x]] = acc;
        }
    }
    if pose.t == [0.0, 0.0] {
        img
    } else {
        shift_image(&img, pose.t)
    }
}

/// Bilinear real-space shift: `out(x) = img(x - t)`, zero fill outside.
pub fn shift_image(img: &Array2<f64>, t: [f64; 2]) -> Array2<f64> {
    let l = img.shape()[0];
    let top = (l - 1) as f64;
    Array2::from_shape_fn((l, l), |(y, x)| {
        let sx = x as f64 - t[0];
        let sy = y as f64 - t[1];
        if !(sx >= 0.0 && sx <= top && sy >= 0.0 && sy <= top) {
            return 0.0;
        }
        let x0 = (sx.floor() as usize).min(l - 2);
        let y0 = (sy.floor() as usize).min(l - 2);
        let fx = sx - x0 as f64;
        let fy = sy - y0 as f64;
        img[[y0, x0]] * (1.0 - fx) * (1.0 - fy)
            + img[[y0, x0 + 1]] * fx * (1.0 - fy)
            + img[[y0 + 1, x0]] * (1.0 - fx) * fy
            + img[[y0 + 1, x0 + 1]] * fx * fy
    })
}

/// `exp(-2πi (kx tx + ky ty))` on the centered grid; multiplying a spectrum by it
/// shifts the image by `+t`.
pub fn translation_phase(t: [f64; 2], l: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((l, l), |(y, x)| {
        let ph = -2.0 * PI * (centered_freq(x, l) * t[0] + centered_freq(y, l) * t[1]);
        Complex64::from_polar(1.0, ph)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::fft::{fft2_centered, ifft2_centered_real};
    use crate::numerics::rotation::{axis_angle, sample_rotation_uniform};
    use ndarray::Array3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_slice_is_flat() {
        let sc = slice_coords(&Matrix3::identity(), 16);
        assert_eq!(sc.points().len(), 256);
        assert!(sc.points().iter().all(|p| p[2] == 0.0));
    }

    #[test]
    fn quarter_turn_about_x_maps_normal_to_y() {
        let r = axis_angle([1.0, 0.0, 0.0], PI / 2.0);
        // R^T e_z
        let n = r.transpose() * Vector3::new(0.0, 0.0, 1.0);
        assert!((n - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        // every slice point is orthogonal to that normal
        for p in slice_coords(&r, 16).points() {
            assert!(p[1].abs() < 1e-12);
        }
    }

    #[test]
    fn slice_points_stay_in_the_corner_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let bound = 0.5 * 2f64.sqrt() + 1e-12;
        for _ in 0..10 {
            let r = sample_rotation_uniform(&mut rng);
            let a = slice_coords(&r, 16);
            let b = slice_coords(&r, 16);
            assert_eq!(a, b);
            for p in a.points() {
                assert!((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() <= bound);
            }
        }
    }

    #[test]
    fn sampling_on_nodes_and_constant_fields() {
        let l = 16;
        let data = Array3::from_shape_fn((l, l, l), |(z, y, x)| (x + 2 * y + 3 * z) as f64);
        let vol = Volume::new(data, 1.0).unwrap();
        let fv = vol.to_fourier(1).unwrap();
        let sc = slice_coords(&Matrix3::identity(), l);
        let s = trilinear_sample(&fv, &sc);
        for y in 0..l {
            for x in 0..l {
                assert!((s[[y, x]] - fv.data()[[l / 2, y, x]]).norm() < 1e-9);
            }
        }
        let c = Complex64::new(1.5, -0.5);
        let constant = FourierVolume::from_spectrum(Array3::from_elem((l, l, l), c), l, 1, 1.0).unwrap();
        let r = axis_angle([0.3, 0.2, 0.9], 0.7);
        let s = trilinear_sample(&constant, &slice_coords(&r, l));
        let sc = slice_coords(&r, l);
        for (v, p) in s.iter().zip(sc.points()) {
            let interior = p.iter().all(|c| c.abs() <= 0.4);
            if interior {
                assert!((v - c).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_projection_is_z_sum() {
        let l = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        let data = Array3::from_shape_fn((l, l, l), |_| rng.random_range(0.0..1.0));
        let vol = Volume::new(data.clone(), 1.0).unwrap();
        let img = project_real_space(&vol, &Pose::identity());
        let expect = data.sum_axis(ndarray::Axis(0));
        assert!((&img - &expect).iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn phase_edge_cases() {
        let ones = translation_phase([0.0, 0.0], 16);
        assert!(ones.iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        let full = translation_phase([16.0, 0.0], 16);
        assert!(full.iter().all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-9));
        let p = translation_phase([0.37, -2.1], 16);
        assert!(p.iter().all(|c| (c.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn phase_shift_equals_circular_shift() {
        let l = 16;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        use rand::Rng;
        let img = Array2::from_shape_fn((l, l), |_| rng.random_range(-1.0..1.0));
        let (tx, ty) = (3i64, -5i64);
        let f = fft2_centered(&img).unwrap() * &translation_phase([tx as f64, ty as f64], l);
        let shifted = ifft2_centered_real(&f).unwrap();
        for y in 0..l {
            for x in 0..l {
                let sx = (x as i64 - tx).rem_euclid(l as i64) as usize;
                let sy = (y as i64 - ty).rem_euclid(l as i64) as usize;
                assert!((shifted[[y, x]] - img[[sy, sx]]).abs() < 1e-6);
            }
        }
    }
}
