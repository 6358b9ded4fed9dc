//! Reconstruction, prior and pose-supervision losses.

use nalgebra::Matrix3;
use ndarray::Array2;

use crate::numerics::fft::partner_index;

pub const LAMBDA_Z: f64 = 1e-4;
pub const LAMBDA_T: f64 = 1e-3;
pub const LAMBDA_P: f64 = 0.1;

/// Mean squared error over all pixels.
pub fn loss_image(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    assert_eq!(pred.dim(), target.dim(), "image shapes");
    let n = pred.len() as f64;
    pred.iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n
}

/// Mirror `x → −x` about the center pixel (column `L/2` fixed, column 0 wraps to itself).
pub fn flip_horizontal(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    Array2::from_shape_fn((h, w), |(y, x)| img[[y, partner_index(x, w)]])
}

/// `min{loss_image(pred, target), loss_image(pred, flip(target))}`.
pub fn loss_sym(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    loss_image(pred, target).min(loss_image(pred, &flip_horizontal(target)))
}

/// `½ Σ_j (μ_j² + σ_j² − 1 − ln σ_j²)` for one image.
pub fn loss_kl(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Component values entering the reconstruction objective.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReconParts {
    pub sym: f64,
    pub kl: f64,
    /// `½‖t_pred‖₁`
    pub trans: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_z: f64,
    pub lambda_t: f64,
    pub lambda_p: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_z: LAMBDA_Z,
            lambda_t: LAMBDA_T,
            lambda_p: LAMBDA_P,
        }
    }
}

pub fn translation_penalty(t: [f64; 2]) -> f64 {
    0.5 * (t[0].abs() + t[1].abs())
}

/// `L_sym + λ_z·L_z + λ_t·½‖t‖₁`.
pub fn loss_recon_total(parts: &ReconParts, w: &LossWeights) -> f64 {
    parts.sym + w.lambda_z * parts.kl + w.lambda_t * parts.trans
}

/// `(1/9)‖R_syn − R_pred‖²_F` and `½‖t_syn − t_pred‖₁`, unweighted.
pub fn cpp_terms(r_syn: &Matrix3<f64>, r_pred: &Matrix3<f64>, t_syn: [f64; 2], t_pred: [f64; 2]) -> (f64, f64) {
    let rot = (r_syn - r_pred).norm_squared() / 9.0;
    let trans = 0.5 * ((t_syn[0] - t_pred[0]).abs() + (t_syn[1] - t_pred[1]).abs());
    (rot, trans)
}

/// `λ_p·[(1/9)‖R_syn − R_pred‖²_F + ½‖t_syn − t_pred‖₁]`.
pub fn loss_cpp(r_syn: &Matrix3<f64>, r_pred: &Matrix3<f64>, t_syn: [f64; 2], t_pred: [f64; 2], lambda_p: f64) -> f64 {
    let (r, t) = cpp_terms(r_syn, r_pred, t_syn, t_pred);
    lambda_p * (r + t)
}
