use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::fft::{fft3_centered, Complex64};
use crate::error::{HetemError, Result};

/// Real-space density on a cubic `L×L×L` grid, indexed `[z, y, x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f64>,
    apix: f64,
}

impl Volume {
    pub fn new(data: Array3<f64>, apix: f64) -> Result<Self> {
        let l = data.shape()[0];
        if data.shape().iter().any(|&s| s != l) {
            return Err(HetemError::Dimension(format!(
                "volume must be cubic, got {:?}",
                data.shape()
            )));
        }
        if l % 2 != 0 || l < 8 {
            return Err(HetemError::Dimension(format!(
                "volume side must be even and at least 8, got {l}"
            )));
        }
        if !(apix > 0.0 && apix.is_finite()) {
            return Err(HetemError::Parameter(format!("pixel size must be positive, got {apix}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(HetemError::Parameter("volume contains non-finite values".into()));
        }
        Ok(Volume { data, apix })
    }

    pub fn zeros(l: usize, apix: f64) -> Result<Self> {
        Volume::new(Array3::zeros((l, l, l)), apix)
    }

    pub fn side(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn apix(&self) -> f64 {
        self.apix
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn mass(&self) -> f64 {
        self.data.sum()
    }

    /// Trilinear sample at centered voxel coordinates `(x, y, z)`; zero outside the grid.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let l = self.side();
        let h = (l / 2) as f64;
        trilinear(l, [p[0] + h, p[1] + h, p[2] + h], |z, y, x| self.data[[z, y, x]])
    }

    /// Centered 3D transform zero-padded by `pad` (1 = no padding).
    pub fn to_fourier(&self, pad: usize) -> Result<FourierVolume> {
        FourierVolume::from_volume(self, pad)
    }
}

/// Trilinear interpolation on an `n³` grid at index-space position `g = (x, y, z)`.
/// Positions outside `[0, n-1]` on any axis return zero.
#[inline]
pub(crate) fn trilinear<T, F>(n: usize, g: [f64; 3], at: F) -> T
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
    F: Fn(usize, usize, usize) -> T,
{
    let top = (n - 1) as f64;
    if g.iter().any(|&c| !(c >= 0.0 && c <= top)) {
        return T::default();
    }
    let i0 = g.map(|c| (c.floor() as usize).min(n - 2));
    let f = [g[0] - i0[0] as f64, g[1] - i0[1] as f64, g[2] - i0[2] as f64];
    let (x0, y0, z0) = (i0[0], i0[1], i0[2]);
    let mut acc = T::default();
    for (dz, wz) in [(0, 1.0 - f[2]), (1, f[2])] {
        for (dy, wy) in [(0, 1.0 - f[1]), (1, f[1])] {
            for (dx, wx) in [(0, 1.0 - f[0]), (1, f[0])] {
                let w = wx * wy * wz;
                if w != 0.0 {
                    acc = acc + at(z0 + dz, y0 + dy, x0 + dx) * w;
                }
            }
        }
    }
    acc
}

/// Centered 3D Fourier transform of a [`Volume`], optionally oversampled.
///
/// The grid has `n = pad·L` samples per axis, so neighbouring nodes are
/// `1/n` cycles/pixel apart. Oversampling keeps trilinear slicing accurate
/// for objects that fill a sizeable fraction of the box.
#[derive(Debug, Clone)]
pub struct FourierVolume {
    data: Array3<Complex64>,
    l: usize,
    pad: usize,
    apix: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct FourierLayout {
    pub l: usize,
    pub pad: usize,
}

impl FourierVolume {
    pub fn from_volume(vol: &Volume, pad: usize) -> Result<Self> {
        if pad == 0 {
            return Err(HetemError::Parameter("padding factor must be at least 1".into()));
        }
        let l = vol.side();
        let n = l * pad;
        let off = (n - l) / 2;
        let mut padded = Array3::<f64>::zeros((n, n, n));
        padded
            .slice_mut(ndarray::s![off..off + l, off..off + l, off..off + l])
            .assign(vol.data());
        Ok(FourierVolume {
            data: fft3_centered(&padded)?,
            l,
            pad,
            apix: vol.apix(),
        })
    }

    /// Wraps an existing centered spectrum of side `pad·l`.
    pub fn from_spectrum(data: Array3<Complex64>, l: usize, pad: usize, apix: f64) -> Result<Self> {
        let n = data.shape()[0];
        if data.shape().iter().any(|&s| s != n) || n != l * pad {
            return Err(HetemError::Dimension(format!(
                "spectrum shape {:?} does not match L={l}, pad={pad}",
                data.shape()
            )));
        }
        Ok(FourierVolume { data, l, pad, apix })
    }

    pub fn data(&self) -> &Array3<Complex64> {
        &self.data
    }

    pub fn side(&self) -> usize {
        self.l
    }

    pub fn grid_size(&self) -> usize {
        self.l * self.pad
    }

    pub fn pad(&self) -> usize {
        self.pad
    }

    pub fn apix(&self) -> f64 {
        self.apix
    }

    pub fn layout(&self) -> FourierLayout {
        FourierLayout {
            l: self.l,
            pad: self.pad,
        }
    }

    /// Trilinear sample at a frequency given in cycles/pixel.
    pub fn sample(&self, k: [f64; 3]) -> Complex64 {
        let n = self.grid_size();
        let h = (n / 2) as f64;
        let nf = n as f64;
        trilinear(n, [k[0] * nf + h, k[1] * nf + h, k[2] * nf + h], |z, y, x| {
            self.data[[z, y, x]]
        })
    }
}
