//! Gaussian random Fourier feature encoding of 3D coordinates.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;

use crate::error::{HetemError, Result};

/// Fixed frequency matrix `B ∈ ℝ^{m×3}` with i.i.d. `N(0, scale²)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RffBasis {
    freqs: Vec<[f64; 3]>,
    scale: f64,
}

impl RffBasis {
    pub fn sample<R: Rng + ?Sized>(m: usize, scale: f64, rng: &mut R) -> Result<Self> {
        if m == 0 || !(scale > 0.0) {
            return Err(HetemError::Parameter(format!(
                "RFF basis needs m > 0 and positive scale, got m={m}, scale={scale}"
            )));
        }
        let normal = Normal::new(0.0, scale).expect("positive scale");
        let freqs = (0..m)
            .map(|_| [normal.sample(rng), normal.sample(rng), normal.sample(rng)])
            .collect();
        Ok(RffBasis { freqs, scale })
    }

    pub fn from_freqs(freqs: Vec<[f64; 3]>, scale: f64) -> Self {
        RffBasis { freqs, scale }
    }

    pub fn m(&self) -> usize {
        self.freqs.len()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn freqs(&self) -> &[[f64; 3]] {
        &self.freqs
    }

    /// `[cos(2π c·Bᵀ), sin(2π c·Bᵀ)]` for each row `c`.
    pub fn encode(&self, coords: &[[f64; 3]]) -> Array2<f64> {
        let m = self.m();
        let mut out = Array2::zeros((coords.len(), 2 * m));
        for (mut row, c) in out.outer_iter_mut().zip(coords) {
            for (j, b) in self.freqs.iter().enumerate() {
                let p = 2.0 * PI * (c[0] * b[0] + c[1] * b[1] + c[2] * b[2]);
                let (s, co) = p.sin_cos();
                row[j] = co;
                row[m + j] = s;
            }
        }
        out
    }
}
