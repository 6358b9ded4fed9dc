//! Centered discrete Fourier and Hartley transforms.
//!
//! Every grid in this crate puts the zero frequency at index `L/2` and uses
//! centered spatial coordinates `x = i - L/2`. For even `L` the
//! `fftshift`/`ifftshift` pair reduces to a roll by `L/2`, which is folded
//! into the copies in and out of the scratch buffer.

use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex;
use num_traits::Float;
use rustfft::{Fft, FftNum, FftPlanner};

use crate::error::{HetemError, Result};

pub type Complex64 = Complex<f64>;

/// Reusable plans for centered 2D transforms of a fixed `L×L` size.
pub struct CenteredFft2<T: FftNum> {
    l: usize,
    fwd: Arc<dyn Fft<T>>,
    inv: Arc<dyn Fft<T>>,
    scratch: Vec<Complex<T>>,
    buf: Vec<Complex<T>>,
}

impl<T: FftNum + Float> CenteredFft2<T> {
    pub fn new(l: usize) -> Result<Self> {
        if l == 0 || l % 2 != 0 {
            return Err(HetemError::Dimension(format!(
                "centered transforms need an even side length, got {l}"
            )));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(l);
        let inv = planner.plan_fft_inverse(l);
        let scratch_len = fwd
            .get_inplace_scratch_len()
            .max(inv.get_inplace_scratch_len());
        Ok(CenteredFft2 {
            l,
            fwd,
            inv,
            scratch: vec![Complex::new(T::zero(), T::zero()); scratch_len],
            buf: vec![Complex::new(T::zero(), T::zero()); l * l],
        })
    }

    pub fn len(&self) -> usize {
        self.l
    }

    pub fn is_empty(&self) -> bool {
        self.l == 0
    }

    fn run(&mut self, inverse: bool) {
        let l = self.l;
        let plan = if inverse { &self.inv } else { &self.fwd };
        // rows
        for row in self.buf.chunks_exact_mut(l) {
            plan.process_with_scratch(row, &mut self.scratch);
        }
        // columns, via a transposed pass
        let mut col = vec![Complex::new(T::zero(), T::zero()); l];
        for x in 0..l {
            for y in 0..l {
                col[y] = self.buf[y * l + x];
            }
            plan.process_with_scratch(&mut col, &mut self.scratch);
            for y in 0..l {
                self.buf[y * l + x] = col[y];
            }
        }
    }

    fn load_shifted<F: Fn(usize) -> Complex<T>>(&mut self, src: F) {
        let l = self.l;
        let h = l / 2;
        for y in 0..l {
            for x in 0..l {
                self.buf[((y + h) % l) * l + (x + h) % l] = src(y * l + x);
            }
        }
    }

    fn store_shifted<F: FnMut(usize, Complex<T>)>(&self, mut dst: F) {
        let l = self.l;
        let h = l / 2;
        for y in 0..l {
            for x in 0..l {
                dst(y * l + x, self.buf[((y + h) % l) * l + (x + h) % l]);
            }
        }
    }

    /// Unnormalized centered forward DFT of a complex row-major `L×L` slice.
    pub fn forward(&mut self, input: &[Complex<T>], out: &mut [Complex<T>]) {
        self.load_shifted(|i| input[i]);
        self.run(false);
        self.store_shifted(|i, v| out[i] = v);
    }

    /// Centered inverse DFT including the `1/L²` factor.
    pub fn inverse(&mut self, input: &[Complex<T>], out: &mut [Complex<T>]) {
        self.load_shifted(|i| input[i]);
        self.run(true);
        let norm = T::one() / T::from_usize(self.l * self.l).unwrap();
        self.store_shifted(|i, v| out[i] = v * norm);
    }

    /// Unnormalized centered Hartley transform `H = Re F - Im F` of a real image.
    pub fn hartley(&mut self, input: &[T], out: &mut [T]) {
        self.load_shifted(|i| Complex::new(input[i], T::zero()));
        self.run(false);
        self.store_shifted(|i, v| out[i] = v.re - v.im);
    }

    /// Inverse centered Hartley transform (the forward transform scaled by `1/L²`).
    pub fn inverse_hartley(&mut self, input: &[T], out: &mut [T]) {
        self.load_shifted(|i| Complex::new(input[i], T::zero()));
        self.run(false);
        let norm = T::one() / T::from_usize(self.l * self.l).unwrap();
        self.store_shifted(|i, v| out[i] = (v.re - v.im) * norm);
    }
}

fn check_square(shape: &[usize]) -> Result<usize> {
    let l = shape[0];
    if shape.iter().any(|&s| s != l) {
        return Err(HetemError::Dimension(format!(
            "expected a square/cubic grid, got shape {shape:?}"
        )));
    }
    if l == 0 || l % 2 != 0 {
        return Err(HetemError::Dimension(format!(
            "side length must be even, got {l}"
        )));
    }
    Ok(l)
}

/// Centered 2D DFT of a real image; the zero frequency lands at `(L/2, L/2)`.
pub fn fft2_centered(image: &Array2<f64>) -> Result<Array2<Complex64>> {
    let l = check_square(image.shape())?;
    let mut plan = CenteredFft2::<f64>::new(l)?;
    let input: Vec<Complex64> = image.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut out = vec![Complex64::new(0.0, 0.0); l * l];
    plan.forward(&input, &mut out);
    Ok(Array2::from_shape_vec((l, l), out).expect("shape"))
}

/// Inverse of [`fft2_centered`]; returns the complex result.
pub fn ifft2_centered(spectrum: &Array2<Complex64>) -> Result<Array2<Complex64>> {
    let l = check_square(spectrum.shape())?;
    let mut plan = CenteredFft2::<f64>::new(l)?;
    let input: Vec<Complex64> = spectrum.iter().copied().collect();
    let mut out = vec![Complex64::new(0.0, 0.0); l * l];
    plan.inverse(&input, &mut out);
    Ok(Array2::from_shape_vec((l, l), out).expect("shape"))
}

/// Real part of [`ifft2_centered`].
pub fn ifft2_centered_real(spectrum: &Array2<Complex64>) -> Result<Array2<f64>> {
    Ok(ifft2_centered(spectrum)?.mapv(|c| c.re))
}

pub fn hartley2_centered(image: &Array2<f64>) -> Result<Array2<f64>> {
    let l = check_square(image.shape())?;
    let mut plan = CenteredFft2::<f64>::new(l)?;
    let input: Vec<f64> = image.iter().copied().collect();
    let mut out = vec![0.0; l * l];
    plan.hartley(&input, &mut out);
    Ok(Array2::from_shape_vec((l, l), out).expect("shape"))
}

pub fn ihartley2_centered(coeffs: &Array2<f64>) -> Result<Array2<f64>> {
    let l = check_square(coeffs.shape())?;
    let mut plan = CenteredFft2::<f64>::new(l)?;
    let input: Vec<f64> = coeffs.iter().copied().collect();
    let mut out = vec![0.0; l * l];
    plan.inverse_hartley(&input, &mut out);
    Ok(Array2::from_shape_vec((l, l), out).expect("shape"))
}

fn fft3_in_place(data: &mut [Complex64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let plan = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
    // x lanes are contiguous
    for lane in data.chunks_exact_mut(n) {
        plan.process_with_scratch(lane, &mut scratch);
    }
    let mut lane = vec![Complex64::new(0.0, 0.0); n];
    // y lanes
    for z in 0..n {
        for x in 0..n {
            for y in 0..n {
                lane[y] = data[(z * n + y) * n + x];
            }
            plan.process_with_scratch(&mut lane, &mut scratch);
            for y in 0..n {
                data[(z * n + y) * n + x] = lane[y];
            }
        }
    }
    // z lanes
    for y in 0..n {
        for x in 0..n {
            for z in 0..n {
                lane[z] = data[(z * n + y) * n + x];
            }
            plan.process_with_scratch(&mut lane, &mut scratch);
            for z in 0..n {
                data[(z * n + y) * n + x] = lane[z];
            }
        }
    }
}

fn roll3<T: Copy>(src: &[T], n: usize) -> Vec<T> {
    let h = n / 2;
    let mut out = src.to_vec();
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                out[(((z + h) % n) * n + (y + h) % n) * n + (x + h) % n] = src[(z * n + y) * n + x];
            }
        }
    }
    out
}

/// Centered 3D DFT of a real cubic grid indexed `[z, y, x]`.
pub fn fft3_centered(vol: &Array3<f64>) -> Result<Array3<Complex64>> {
    let n = check_square(vol.shape())?;
    let src: Vec<Complex64> = vol.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let mut data = roll3(&src, n);
    fft3_in_place(&mut data, n, false);
    Ok(Array3::from_shape_vec((n, n, n), roll3(&data, n)).expect("shape"))
}

/// Centered inverse 3D DFT including the `1/n³` factor.
pub fn ifft3_centered(spec: &Array3<Complex64>) -> Result<Array3<Complex64>> {
    let n = check_square(spec.shape())?;
    let src: Vec<Complex64> = spec.iter().copied().collect();
    let mut data = roll3(&src, n);
    fft3_in_place(&mut data, n, true);
    let norm = 1.0 / (n * n * n) as f64;
    let out: Vec<Complex64> = roll3(&data, n).into_iter().map(|c| c * norm).collect();
    Ok(Array3::from_shape_vec((n, n, n), out).expect("shape"))
}

/// Frequency of index `i` on a centered grid of size `n`, in cycles/sample.
#[inline]
pub fn centered_freq(i: usize, n: usize) -> f64 {
    (i as f64 - (n / 2) as f64) / n as f64
}

/// Index of the frequency `-k` for index `i` on a centered grid (aliasing `-n/2` to itself).
#[inline]
pub fn partner_index(i: usize, n: usize) -> usize {
    (n - i) % n
}
